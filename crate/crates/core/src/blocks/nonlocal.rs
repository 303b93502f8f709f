//! Non-local (self-attention) block.
//!
//! For an input `x` of shape `[B, C, H, W]` and `N = H * W` locations:
//!
//! ```text
//! q = f(x) : [C/r, N]     k = g(x) : [C/r, N]     v = h(x) : [C, N]
//! A = softmax_rows(qᵀ k) : [N, N]    (row i = weights of output location i)
//! y = x + gamma * (v · Aᵀ)
//! ```
//!
//! `f`, `g`, `h` are 1x1 convolutions and `gamma` starts at zero, so a
//! fresh block is the identity map. None of the parameters depend on `N`.
//! The attention product runs through the fused [`Tape::attention`] op;
//! [`NonLocalBlock::forward_composed`] spells it out with separate matmul
//! and softmax ops.

use crate::autodiff::{attention_weights, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::layers::{Conv, ForwardCtx};

#[derive(Clone, Debug, PartialEq)]
pub struct NonLocalBlock<T> {
    /// `f`: C -> C/r.
    pub query: Conv<T>,
    /// `g`: C -> C/r.
    pub key: Conv<T>,
    /// `h`: C -> C.
    pub value: Conv<T>,
    /// Scalar gate on the attention branch.
    pub gamma: Tensor<T>,
}

impl<T: Scalar> NonLocalBlock<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "non-local block needs channels ({channels}) divisible by {reduction}"
            )));
        }
        let inner = channels / reduction;
        Ok(Self {
            query: Conv::new(channels, inner, 1, rng),
            key: Conv::new(channels, inner, 1, rng),
            value: Conv::new(channels, channels, 1, rng),
            gamma: Tensor::zeros([1]),
        })
    }

    pub fn channels(&self) -> usize {
        self.value.in_channels()
    }

    pub fn gamma(&self) -> T {
        self.gamma.item()
    }

    pub fn set_gamma(&mut self, gamma: T) {
        self.gamma = Tensor::scalar(gamma);
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        self.forward_impl(tape, x, ctx, true)
    }

    /// Same map as [`forward`](Self::forward), recorded as separate
    /// matmul, softmax and matmul ops with the `[B, N, N]` attention
    /// materialized on the tape.
    pub fn forward_composed(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<Var> {
        self.forward_impl(tape, x, ctx, false)
    }

    fn forward_impl(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, T>,
        fused: bool,
    ) -> Result<Var> {
        let [b, c, h, w] = tape.value(x).dims4("non_local_block")?;
        if c != self.channels() {
            return Err(Error::shape(
                "non_local_block",
                format!("expected {} channels, got {c}", self.channels()),
            ));
        }
        let n = h * w;
        let inner = self.query.out_channels();
        let q = self.query.forward(tape, x, ctx)?;
        let q = tape.reshape(q, [b, inner, n])?;
        let k = self.key.forward(tape, x, ctx)?;
        let k = tape.reshape(k, [b, inner, n])?;
        let v = self.value.forward(tape, x, ctx)?;
        let v = tape.reshape(v, [b, c, n])?;

        let attended = if fused {
            tape.attention(q, k, v)?
        } else {
            let scores = tape.matmul_t(q, true, k, false)?;
            let attention = tape.softmax_rows(scores)?;
            tape.matmul_t(v, false, attention, true)?
        };
        let attended = tape.reshape(attended, [b, c, h, w])?;
        let gamma = ctx.bind(tape, &self.gamma);
        tape.gated_residual(x, attended, gamma)
    }

    pub(crate) fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.query.tensors().into();
        out.extend(self.key.tensors());
        out.extend(self.value.tensors());
        out.push(&self.gamma);
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.query.tensors_mut().into();
        out.extend(self.key.tensors_mut());
        out.extend(self.value.tensors_mut());
        out.push(&mut self.gamma);
        out
    }

    /// Attention matrices `[B, N, N]` of one forward pass (rows sum to 1).
    pub fn attention(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut ctx = ForwardCtx::eval();
        let [b, _, h, w] = x.dims4("non_local_block")?;
        let inner = self.query.out_channels();
        let q = self.query.forward(&mut tape, xv, &mut ctx)?;
        let q = tape.reshape(q, [b, inner, h * w])?;
        let k = self.key.forward(&mut tape, xv, &mut ctx)?;
        let k = tape.reshape(k, [b, inner, h * w])?;
        let (qd, kd) = (tape.value(q).data(), tape.value(k).data());
        let n = h * w;
        let mut out = vec![T::zero(); b * n * n];
        let mut stats = vec![(T::zero(), T::zero()); n];
        for i in 0..b {
            let span = i * inner * n..(i + 1) * inner * n;
            let weights = &mut out[i * n * n..(i + 1) * n * n];
            attention_weights(&qd[span.clone()], &kd[span], inner, n, weights, &mut stats);
        }
        Tensor::new([b, n, n], out)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn run(block: &NonLocalBlock<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = block
            .forward(&mut tape, xv, &mut ForwardCtx::eval())
            .unwrap();
        tape.value(y).clone()
    }

    /// Materializes the N x N attention with explicit loops.
    pub(crate) fn dense_oracle(block: &NonLocalBlock<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let [b, c, h, w] = x.shape().try_into().unwrap();
        let n = h * w;
        let proj = |conv: &Conv<f64>, s: usize| -> Vec<Vec<f64>> {
            let out = conv.out_channels();
            (0..out)
                .map(|o| {
                    (0..n)
                        .map(|p| {
                            conv.bias.data()[o]
                                + (0..c)
                                    .map(|ci| {
                                        conv.weight.data()[o * c + ci]
                                            * x.data()[(s * c + ci) * n + p]
                                    })
                                    .sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let gamma = block.gamma();
        let mut out = x.data().to_vec();
        for s in 0..b {
            let f = proj(&block.query, s);
            let g = proj(&block.key, s);
            let hv = proj(&block.value, s);
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..f.len()).map(|r| f[r][i] * g[r][j]).sum())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for ch in 0..c {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += hv[ch][j] * exps[j] / z;
                    }
                    out[(s * c + ch) * n + i] += gamma * acc;
                }
            }
        }
        out
    }

    #[test]
    fn zero_gate_is_bit_exact_identity() {
        let mut rng = Rng::seed(1);
        let block = NonLocalBlock::<f64>::new(16, 8, &mut rng).unwrap();
        assert_eq!(block.gamma(), 0.0);
        let x = random(&[2, 16, 4, 4], &mut rng);
        let y = run(&block, &x);
        assert!(y
            .data()
            .iter()
            .zip(x.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn single_location_adds_gated_value() {
        let mut rng = Rng::seed(2);
        let mut block = NonLocalBlock::<f64>::new(8, 8, &mut rng).unwrap();
        block.set_gamma(0.7);
        let x = random(&[3, 8, 1, 1], &mut rng);
        let y = run(&block, &x);
        for s in 0..3 {
            for o in 0..8 {
                let hv: f64 = block.value.bias.data()[o]
                    + (0..8)
                        .map(|ci| block.value.weight.data()[o * 8 + ci] * x.data()[s * 8 + ci])
                        .sum::<f64>();
                let want = x.data()[s * 8 + o] + 0.7 * hv;
                assert!((y.data()[s * 8 + o] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = Rng::seed(3);
        let mut block = NonLocalBlock::<f64>::new(8, 8, &mut rng).unwrap();
        block.set_gamma(0.5);
        let x = random(&[2, 8, 4, 4], &mut rng);
        let got = run(&block, &x);
        let want = dense_oracle(&block, &x);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fused_and_composed_paths_agree() {
        let mut rng = Rng::seed(7);
        let mut block = NonLocalBlock::<f64>::new(16, 8, &mut rng).unwrap();
        block.set_gamma(0.8);
        let x = random(&[2, 16, 3, 4], &mut rng);
        let seed = random(&[2, 16, 3, 4], &mut rng);
        let mut results = Vec::new();
        for fused in [true, false] {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let mut ctx = ForwardCtx::eval_with_grads();
            let y = if fused {
                block.forward(&mut tape, xv, &mut ctx)
            } else {
                block.forward_composed(&mut tape, xv, &mut ctx)
            }
            .unwrap();
            let grads = tape.backward_from(y, seed.clone()).unwrap();
            let mut all = tape.value(y).data().to_vec();
            all.extend_from_slice(grads.get(xv).unwrap().data());
            for p in &ctx.params {
                all.extend_from_slice(grads.get(*p).unwrap().data());
            }
            results.push(all);
        }
        for (a, b) in results[0].iter().zip(&results[1]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::seed(4);
        let block = NonLocalBlock::<f32>::new(16, 8, &mut rng).unwrap();
        let x = Tensor::from_fn([2, 16, 5, 3], |_| rng.random_range(-2.0f32..2.0));
        let a = block.attention(&x).unwrap();
        assert_eq!(a.shape(), [2, 15, 15]);
        for row in a.data().chunks(15) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn channels_must_divide_by_reduction() {
        let mut rng = Rng::seed(5);
        let err = NonLocalBlock::<f32>::new(12, 8, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn parameter_count_is_independent_of_spatial_size() {
        let mut rng = Rng::seed(6);
        let block = NonLocalBlock::<f32>::new(32, 8, &mut rng).unwrap();
        let count: usize = block.tensors().iter().map(|t| t.numel()).sum();
        assert_eq!(count, (32 * 4 + 4) * 2 + (32 * 32 + 32) + 1);
        for side in [1, 4, 9] {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::ones([1, 32, side, side]));
            let mut ctx = ForwardCtx::eval();
            block.forward(&mut tape, x, &mut ctx).unwrap();
            let bound: usize = ctx.params.iter().map(|v| tape.value(*v).numel()).sum();
            assert_eq!(bound, count);
        }
    }
}
