use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use rustfft::FftNum;

/// Floating-point element type of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (training and inference) and `f64` (gradient checks).
pub trait Scalar:
    Float + FftNum + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn erf(self) -> Self;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for row/column-strided matrices.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows as isize - 1) as usize * rs as usize + (cols as isize - 1) as usize * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $erf:path, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched lies inside the spans asserted above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, libm::erff, matrixmultiply::sgemm);
impl_scalar!(f64, libm::erf, matrixmultiply::dgemm);
