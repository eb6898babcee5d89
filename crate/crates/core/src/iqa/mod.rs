//! Image quality metrics. Full-reference: PSNR, SSIM, MS-SSIM, MSE and MAE.
//! No-reference: NIQE against a fitted pristine model, and BRISQUE features
//! scored by a regressor or by distance to the pristine model.
//!
//! All metrics work on unit-range intensities and are deterministic.

mod brisque;
mod filter;
mod fullref;
mod niqe;
mod nss;
mod report;

pub use brisque::{brisque_features, brisque_score, BrisqueRegressor};
pub use fullref::{mae, ms_ssim, ms_ssim_scales, mse, psnr, ssim, MS_SSIM_WEIGHTS, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use niqe::{NiqeModel, DEFAULT_PATCH as NIQE_DEFAULT_PATCH, MIN_PRISTINE_IMAGES, SHARPNESS_THRESHOLD};
pub use nss::NUM_FEATURES;
pub use report::{spearman, Metric, MetricReport};

/// Fits a [`NiqeModel`] on pristine images.
pub fn fit_niqe_model(pristine: &[crate::ImageTensor], patch: usize) -> crate::Result<NiqeModel> {
    NiqeModel::fit(pristine, patch)
}

/// NIQE score of `img` under `model`; lower is more natural.
pub fn niqe(img: &crate::ImageTensor, model: &NiqeModel) -> crate::Result<f64> {
    model.score(img)
}
