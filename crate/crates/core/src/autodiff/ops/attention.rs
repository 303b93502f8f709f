//! Fused softmax attention for the non-local block.
//!
//! Computes `out_b = v_b · softmax_rows(q_bᵀ k_b)ᵀ` one sample at a time in
//! an `N x N` scratch buffer. Only the per-row maximum and normalizer are
//! kept for the backward pass, which recomputes the attention weights
//! bit-identically instead of storing a `[B, N, N]` tensor.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::softmax::{backward_rows, replay_rows, softmax_rows};

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    batch: usize,
    inner: usize,
    channels: usize,
    n: usize,
}

/// Attention weights of one sample: `scores` receives `softmax_rows(qᵀ k)`
/// as `[n, n]`; the row maxima and normalizers go to `stats`.
pub(crate) fn attention_weights<T: Scalar>(
    q: &[T],
    k: &[T],
    inner: usize,
    n: usize,
    scores: &mut [T],
    stats: &mut [(T, T)],
) {
    T::gemm(n, inner, n, q, true, k, false, scores, T::zero());
    softmax_rows(scores, n, stats);
}

/// Rebuilds the weights from saved row statistics.
fn replay_weights<T: Scalar>(
    q: &[T],
    k: &[T],
    inner: usize,
    n: usize,
    stats: &[(T, T)],
    scores: &mut [T],
) {
    T::gemm(n, inner, n, q, true, k, false, scores, T::zero());
    replay_rows(scores, n, stats);
}

impl<T: Scalar> Tape<T> {
    /// `[B, D, N]` queries and keys with `[B, C, N]` values give the
    /// `[B, C, N]` output whose column `i` is the attention-weighted sum of
    /// value columns, weights `softmax_j(Σ_d q[d, i] k[d, j])`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (qs, ks, vs) = (
            self.value(q).shape(),
            self.value(k).shape(),
            self.value(v).shape(),
        );
        let (&[b, d, n], &[bk, dk, nk], &[bv, c, nv]) = (qs, ks, vs) else {
            return Err(Error::shape(
                "attention",
                format!("expected rank-3 operands, got {qs:?}, {ks:?}, {vs:?}"),
            ));
        };
        if (b, d, n) != (bk, dk, nk) || (b, n) != (bv, nv) {
            return Err(Error::shape(
                "attention",
                format!("incompatible q {qs:?}, k {ks:?}, v {vs:?}"),
            ));
        }
        let dims = AttnDims {
            batch: b,
            inner: d,
            channels: c,
            n,
        };
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut out = vec![T::zero(); b * c * n];
        let mut stats = vec![(T::zero(), T::zero()); b * n];
        let mut scores = vec![T::zero(); n * n];
        for i in 0..b {
            let qi = &qd[i * d * n..(i + 1) * d * n];
            let ki = &kd[i * d * n..(i + 1) * d * n];
            attention_weights(qi, ki, d, n, &mut scores, &mut stats[i * n..(i + 1) * n]);
            let vi = &vd[i * c * n..(i + 1) * c * n];
            T::gemm(
                c,
                n,
                n,
                vi,
                false,
                &scores,
                true,
                &mut out[i * c * n..(i + 1) * c * n],
                T::zero(),
            );
        }
        let value = Tensor::new([b, c, n], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                stats,
                dims,
            },
        ))
    }
}

pub(crate) fn backward<T: Scalar>(
    q: Var,
    k: Var,
    v: Var,
    stats: &[(T, T)],
    dims: AttnDims,
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let AttnDims {
        batch,
        inner: d,
        channels: c,
        n,
    } = dims;
    let (want_q, want_k, want_v) = (sink.wants(q), sink.wants(k), sink.wants(v));
    if !(want_q || want_k || want_v) {
        return;
    }
    let (qd, kd, vd) = (
        sink.value(q).data(),
        sink.value(k).data(),
        sink.value(v).data(),
    );
    let dout = grad.data();
    let mut dq = if want_q {
        vec![T::zero(); batch * d * n]
    } else {
        Vec::new()
    };
    let mut dk = if want_k {
        vec![T::zero(); batch * d * n]
    } else {
        Vec::new()
    };
    let mut dv = if want_v {
        vec![T::zero(); batch * c * n]
    } else {
        Vec::new()
    };
    let mut weights = vec![T::zero(); n * n];
    let mut dscores = if want_q || want_k {
        vec![T::zero(); n * n]
    } else {
        Vec::new()
    };

    for i in 0..batch {
        let (qs, vs) = (i * d * n..(i + 1) * d * n, i * c * n..(i + 1) * c * n);
        let (qi, ki, vi, gi) = (
            &qd[qs.clone()],
            &kd[qs.clone()],
            &vd[vs.clone()],
            &dout[vs.clone()],
        );
        replay_weights(qi, ki, d, n, &stats[i * n..(i + 1) * n], &mut weights);
        if want_v {
            // dV = dOut · A
            T::gemm(c, n, n, gi, false, &weights, false, &mut dv[vs], T::zero());
        }
        if want_q || want_k {
            // dA = dOutᵀ · V, then through the row softmax.
            T::gemm(n, c, n, gi, true, vi, false, &mut dscores, T::zero());
            backward_rows(&mut dscores, &weights, n);
            if want_q {
                // dQ = K · dSᵀ
                T::gemm(
                    d,
                    n,
                    n,
                    ki,
                    false,
                    &dscores,
                    true,
                    &mut dq[qs.clone()],
                    T::zero(),
                );
            }
            if want_k {
                // dK = Q · dS
                T::gemm(d, n, n, qi, false, &dscores, false, &mut dk[qs], T::zero());
            }
        }
    }
    let shape = |ch: usize| [batch, ch, n];
    if want_q {
        sink.add(q, Tensor::new(shape(d), dq).expect("q shape"));
    }
    if want_k {
        sink.add(k, Tensor::new(shape(d), dk).expect("k shape"));
    }
    if want_v {
        sink.add(v, Tensor::new(shape(c), dv).expect("v shape"));
    }
}
