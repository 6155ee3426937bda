use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the networks are generic over. Training runs in `f32`,
/// gradient verification in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `c += a · b` for strided `m×k` and `k×n` operands, through the
    /// type's blocked kernel.
    #[allow(clippy::too_many_arguments)]
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
    );
}

macro_rules! blocked_gemm {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm_acc(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                (rsa, csa): (isize, isize),
                b: &[$t],
                (rsb, csb): (isize, isize),
                c: &mut [$t],
            ) {
                let last = |r: isize, cs: isize, rows: usize, cols: usize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * r as usize + (cols - 1) * cs as usize + 1
                    }
                };
                assert!(
                    a.len() >= last(rsa, csa, m, k)
                        && b.len() >= last(rsb, csb, k, n)
                        && c.len() >= m * n
                );
                // SAFETY: the assertion above bounds every strided access.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        1.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

blocked_gemm!(f32, matrixmultiply::sgemm);
blocked_gemm!(f64, matrixmultiply::dgemm);

/// `ln(1 + e^x)` without overflow.
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax<F: Scalar>(row: &[F]) -> Vec<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

pub fn softmax<F: Scalar>(row: &[F]) -> Vec<F> {
    log_softmax(row).into_iter().map(F::exp).collect()
}
