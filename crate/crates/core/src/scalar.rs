//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Real scalar the tensor engine and model are generic over.
///
/// Implemented for `f32` and `f64`; training and gradient checks use `f64`.
pub trait Scalar:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn of(x: f64) -> Self;

    /// Widens to `f64` for reporting and serialization.
    fn to_f64_lossless(self) -> f64;

    /// `C ← A·B` for strided `A[m×k]`, `B[k×n]` and row-major `C[m×n]`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (isize, isize), b: &[Self], b_strides: (isize, isize), c: &mut [Self]);
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], (rsa, csa): (isize, isize), b: &[Self], (rsb, csb): (isize, isize), c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
        // SAFETY: the asserted lengths cover every strided access for the
        // row- or column-major layouts the kernels pass in.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], (rsa, csa): (isize, isize), b: &[Self], (rsb, csb): (isize, isize), c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
        // SAFETY: the asserted lengths cover every strided access for the
        // row- or column-major layouts the kernels pass in.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}
