//! Binary cross-entropy loss.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;

impl<T: Scalar> Tape<T> {
    /// Mean binary cross-entropy of predicted probabilities against 0/1
    /// targets; returns a one-element tensor.
    pub fn bce_loss(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(Error::shape(
                "bce_loss",
                format!("{} predictions vs {} targets", p.numel(), target.len()),
            ));
        }
        if let Some(&bad) = target.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::InvalidLabel(bad.as_f64()));
        }
        let eps = T::from_f64_lossy(BCE_EPSILON);
        let hi = T::one() - eps;
        let total: T = p
            .data()
            .iter()
            .zip(target)
            .map(|(&pi, &y)| {
                let pc = clamp_probability(pi, eps, hi);
                -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
            })
            .sum();
        let n = T::from_usize(target.len()).expect("batch size");
        let value = Tensor::scalar(total / n);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
        ))
    }
}

/// Clamp that keeps NaN, so a diverged prediction surfaces as a NaN loss.
fn clamp_probability<T: Scalar>(p: T, lo: T, hi: T) -> T {
    if p < lo {
        lo
    } else if p > hi {
        hi
    } else {
        p
    }
}

pub(crate) fn backward<T: Scalar>(
    pred: Var,
    target: &[T],
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(pred) {
        return;
    }
    let p = sink.value(pred);
    let eps = T::from_f64_lossy(BCE_EPSILON);
    let hi = T::one() - eps;
    let scale = grad.item() / T::from_usize(target.len()).expect("batch size");
    // The clamp is passed straight through: the derivative is taken at the
    // clamped probability so saturated predictions still receive a signal.
    let dp = p
        .data()
        .iter()
        .zip(target)
        .map(|(&pi, &y)| {
            let pc = clamp_probability(pi, eps, hi);
            scale * ((pc - y) / (pc * (T::one() - pc)))
        })
        .collect();
    sink.add(pred, Tensor::new(p.shape(), dp).expect("pred shape"));
}
