//! Low-light image enhancement by conditional diffusion in the Haar wavelet
//! domain.
//!
//! The crate is organised bottom-up:
//!
//! * [`imaging`]: image containers, PNG/PPM I/O, parametric low-light
//!   synthesis, patch extraction and dataset manifests.
//! * [`wavelet`]: orthonormal multi-level 2D Haar analysis/synthesis.
//! * [`nn`]: a small reverse-mode autodiff engine with the layers the
//!   networks need, plus Adam with step decay.
//! * [`net`]: the conditional noise predictor (CNM), the edge sharpening
//!   module (ESM), the training loss and checkpoints.
//! * [`diffusion`]: noise schedules, forward corruption, implicit sampling,
//!   the `enhance` pipeline and the training loop.
//! * [`iqa`]: PSNR, SSIM, MS-SSIM, MSE, MAE, NIQE and BRISQUE features.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain iterators otherwise. Every
//! parallel loop writes disjoint outputs, so results are bit-identical for
//! any thread count.

// `!(x > 0.0)` is used to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod container;
pub mod diffusion;
pub mod error;
pub mod imaging;
pub mod iqa;
pub mod net;
pub mod nn;
pub mod par;
pub mod rng;
pub mod wavelet;

pub use error::{Error, Result};
pub use imaging::ImageTensor;
