//! Minimal reverse-mode autodiff over dense tensors.
//!
//! A [`Graph`] records operations on a tape as they run. Parameters live in a
//! [`ParamStore`] and enter the tape through [`Graph::param`]; after
//! [`Graph::backward`] their gradients are accumulated back into the store.
//! Everything is generic over [`Real`] so gradient checks can run in `f64`
//! while training runs in `f32`.

mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{BroadcastMode, Graph, Var};
pub use kernels::{attention, Conv2dSpec};
pub use optim::{AdamConfig, OptimizerState};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Scalar type of the engine (`f32` in production, `f64` for gradient checks).
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    /// `c = a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n`, each given as
    /// `(slice, row stride, column stride)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: Strided<'_, Self>,
        b: Strided<'_, Self>,
        beta: Self,
        c: StridedMut<'_, Self>,
    );
}

/// A matrix view: data, row stride, column stride.
pub type Strided<'a, T> = (&'a [T], usize, usize);
pub type StridedMut<'a, T> = (&'a mut [T], usize, usize);

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: Strided<'_, Self>,
                b: Strided<'_, Self>,
                beta: Self,
                c: StridedMut<'_, Self>,
            ) {
                assert!(a.0.len() >= span(m, k, a.1, a.2), "gemm: a too short");
                assert!(b.0.len() >= span(k, n, b.1, b.2), "gemm: b too short");
                assert!(c.0.len() >= span(m, n, c.1, c.2), "gemm: c too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched lies within the spans asserted above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.0.as_ptr(),
                        a.1 as isize,
                        a.2 as isize,
                        b.0.as_ptr(),
                        b.1 as isize,
                        b.2 as isize,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1 as isize,
                        c.2 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const LAYER_NORM_EPS: f64 = 1e-5;
