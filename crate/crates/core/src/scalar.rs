//! Floating-point element types the engine can run on.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `op(a)` is `[m, k]` and `op(b)` is `[k, n]`. With `trans_a` the buffer
    /// `a` holds `[k, m]`; with `trans_b` the buffer `b` holds `[n, k]`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        beta: Self,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `exp` used by the hot softmax loops. The `f32` version is a
    /// branch-free polynomial that the compiler can vectorize; its relative
    /// error stays within a few ulp for arguments above -87.
    fn fast_exp(self) -> Self;

    /// Shifted softmax exponentials below this are flushed to zero.
    ///
    /// In `f32` the cut-off is 2^-40: the dropped mass per row is at most
    /// `N * 2^-40`, far below rounding, while products of the surviving
    /// weights stay clear of subnormals (which are orders of magnitude
    /// slower in the matrix kernels). `f64` keeps every weight.
    const SOFTMAX_FLUSH: Self;
}

/// Sum with eight independent accumulators so the loop vectorizes.
#[inline(always)]
pub(crate) fn lane_sum<T: Scalar>(values: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = values.chunks_exact(8);
    let tail = chunks.remainder();
    for chunk in chunks {
        for (l, &v) in lanes.iter_mut().zip(chunk) {
            *l = *l + v;
        }
    }
    let mut total = tail.iter().fold(T::zero(), |acc, &v| acc + v);
    for l in lanes {
        total = total + l;
    }
    total
}

/// Dot product with eight independent accumulators.
#[inline(always)]
pub(crate) fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut total = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    for (xa, xb) in ca.zip(cb) {
        for ((l, &x), &y) in lanes.iter_mut().zip(xa).zip(xb) {
            *l = *l + x * y;
        }
    }
    for l in lanes {
        total = total + l;
    }
    total
}

/// Maximum with eight independent lanes; NaN-free input assumed.
#[inline(always)]
pub(crate) fn lane_max<T: Scalar>(values: &[T]) -> T {
    let mut lanes = [T::neg_infinity(); 8];
    let chunks = values.chunks_exact(8);
    let tail = chunks.remainder();
    for chunk in chunks {
        for (l, &v) in lanes.iter_mut().zip(chunk) {
            *l = if v > *l { v } else { *l };
        }
    }
    lanes
        .into_iter()
        .chain(tail.iter().copied())
        .fold(T::neg_infinity(), T::max)
}

#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    // 1.5 * 2^23: adding it rounds to the nearest integer, which then sits
    // in the low mantissa bits.
    const ROUND: f32 = 12_582_912.0;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Comparisons rather than clamp so NaN passes through.
    let x = if x < -87.0 { -87.0 } else { x };
    let x = if x > 88.0 { 88.0 } else { x };
    let shifted = x * LOG2E + ROUND;
    let n = shifted - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    let exponent = shifted
        .to_bits()
        .wrapping_sub(ROUND.to_bits())
        .wrapping_add(127)
        << 23;
    y * f32::from_bits(exponent)
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Strides of the logical [rows, cols] view.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($ty:ty, $kernel:path, $exp:path, $flush:expr) => {
        impl Scalar for $ty {
            const SOFTMAX_FLUSH: Self = $flush;

            #[inline(always)]
            fn fast_exp(self) -> Self {
                $exp(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                beta: Self,
            ) {
                assert!(a.len() >= m * k, "gemm: a too short");
                assert!(b.len() >= k * n, "gemm: b too short");
                assert!(c.len() >= m * n, "gemm: c too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the asserts above bound every index the kernel touches
                // for the given dimensions and strides.
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
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, exp_f32, 9.094_947e-13);
impl_scalar!(f64, matrixmultiply::dgemm, f64::exp, 0.0);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_flush_threshold_is_two_to_minus_forty() {
        assert_eq!(f32::SOFTMAX_FLUSH, 2f32.powi(-40));
        assert_eq!(f64::SOFTMAX_FLUSH, 0.0);
    }

    fn naive(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_transpose_flags_match_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![0.0; m * n];
                f64::gemm(m, k, n, &a, ta, &b, tb, &mut c, 0.0);
                let want = naive(m, k, n, &a, ta, &b, tb);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst = 0f64;
        for i in 0..=200_000 {
            let x = -87.0 + 175.0 * i as f64 / 200_000.0;
            let want = x.exp();
            let got = f64::from((x as f32).fast_exp());
            let want_f32 = f64::from((x as f32).exp());
            worst = worst.max(((got - want_f32) / want_f32).abs());
            assert!(((got - want) / want).abs() < 1e-5, "x={x}");
        }
        assert!(worst < 4.0 * f64::from(f32::EPSILON), "worst {worst}");
        assert_eq!(0.0f32.fast_exp(), 1.0);
        assert!(f32::NAN.fast_exp().is_nan());
    }

    #[test]
    fn lane_reductions_match_sequential() {
        let v: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
        let seq_sum: f64 = v.iter().sum();
        let seq_dot: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lane_sum(&v) - seq_sum).abs() < 1e-12);
        assert!((lane_dot(&v, &w) - seq_dot).abs() < 1e-12);
        assert_eq!(lane_max(&v), v.iter().copied().fold(f64::MIN, f64::max));
        assert_eq!(
            lane_max(&v[..3]),
            v[..3].iter().copied().fold(f64::MIN, f64::max)
        );
    }

    #[test]
    fn gemm_beta_accumulates() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let mut c = [10.0f32];
        f32::gemm(1, 2, 1, &a, false, &b, false, &mut c, 1.0);
        assert_eq!(c[0], 21.0);
    }
}
