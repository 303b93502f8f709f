//! Row-wise softmax, shared by the standalone op and fused attention.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::Result;
use crate::scalar::{lane_dot, lane_max, lane_sum, Scalar};
use crate::tensor::Tensor;

/// `exp(v - max)`, flushed to zero below [`Scalar::SOFTMAX_FLUSH`].
#[inline(always)]
fn shifted_exp<T: Scalar>(v: T, max: T) -> T {
    let e = (v - max).fast_exp();
    if e < T::SOFTMAX_FLUSH {
        T::zero()
    } else {
        e
    }
}

/// Numerically stable softmax of one row in place. Returns the row maximum
/// and the sum of shifted exponentials.
#[inline(always)]
fn softmax_row<T: Scalar>(row: &mut [T]) -> (T, T) {
    let max = lane_max(row);
    row.iter_mut().for_each(|v| *v = shifted_exp(*v, max));
    let total = lane_sum(row);
    let inv = total.recip();
    row.iter_mut().for_each(|v| *v = *v * inv);
    (max, total)
}

#[inline(always)]
fn softmax_rows_generic<T: Scalar>(buf: &mut [T], width: usize, stats: &mut [(T, T)]) {
    for (row, st) in buf.chunks_exact_mut(width).zip(stats) {
        *st = softmax_row(row);
    }
}

/// Recomputes softmax rows from raw scores and saved statistics; the
/// arithmetic matches [`softmax_rows`] exactly.
#[inline(always)]
fn replay_rows_generic<T: Scalar>(buf: &mut [T], width: usize, stats: &[(T, T)]) {
    for (row, &(max, total)) in buf.chunks_exact_mut(width).zip(stats) {
        row.iter_mut().for_each(|v| *v = shifted_exp(*v, max));
        let inv = total.recip();
        row.iter_mut().for_each(|v| *v = *v * inv);
    }
}

/// `dy <- y * (dy - <dy, y>)` row by row.
#[inline(always)]
fn backward_rows_generic<T: Scalar>(dy: &mut [T], y: &[T], width: usize) {
    for (g, p) in dy.chunks_exact_mut(width).zip(y.chunks_exact(width)) {
        let dot = lane_dot(g, p);
        for (gi, &pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - dot);
        }
    }
}

// The same loops compiled with AVX2 enabled. No fused multiply-add is
// introduced, so both builds produce identical bits.
#[cfg(target_arch = "x86_64")]
mod wide {
    use super::*;

    pub(super) fn available() -> bool {
        std::is_x86_feature_detected!("avx2")
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn softmax_rows<T: Scalar>(
        buf: &mut [T],
        width: usize,
        stats: &mut [(T, T)],
    ) {
        softmax_rows_generic(buf, width, stats)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn replay_rows<T: Scalar>(buf: &mut [T], width: usize, stats: &[(T, T)]) {
        replay_rows_generic(buf, width, stats)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn backward_rows<T: Scalar>(dy: &mut [T], y: &[T], width: usize) {
        backward_rows_generic(dy, y, width)
    }
}

/// Softmax of every `width`-long row of `buf` in place, recording each
/// row's maximum and normalizer in `stats`.
pub(crate) fn softmax_rows<T: Scalar>(buf: &mut [T], width: usize, stats: &mut [(T, T)]) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::softmax_rows(buf, width, stats) };
    }
    softmax_rows_generic(buf, width, stats)
}

/// Turns raw scores back into the softmax rows described by `stats`.
pub(crate) fn replay_rows<T: Scalar>(buf: &mut [T], width: usize, stats: &[(T, T)]) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::replay_rows(buf, width, stats) };
    }
    replay_rows_generic(buf, width, stats)
}

/// Softmax backward for every row: `dy` becomes the input gradient.
pub(crate) fn backward_rows<T: Scalar>(dy: &mut [T], y: &[T], width: usize) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::backward_rows(dy, y, width) };
    }
    backward_rows_generic(dy, y, width)
}

impl<T: Scalar> Tape<T> {
    /// Softmax over the last axis, so every row sums to 1.
    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let width = *x.shape().last().expect("rank >= 1");
        let mut out = x.data().to_vec();
        let mut stats = vec![(T::zero(), T::zero()); x.numel() / width];
        softmax_rows(&mut out, width, &mut stats);
        let value = Tensor::new(x.shape(), out)?;
        Ok(self.push(value, Op::Softmax { input }))
    }
}

pub(crate) fn backward<T: Scalar>(
    input: Var,
    output: &Tensor<T>,
    mut grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(input) {
        return;
    }
    let width = *output.shape().last().expect("rank >= 1");
    backward_rows(grad.data_mut(), output.data(), width);
    sink.add(input, grad);
}
