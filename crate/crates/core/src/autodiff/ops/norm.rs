//! Per-channel batch normalization for `[B, C, H, W]` activations.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BATCHNORM_EPSILON: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

/// Learnable affine parameters plus running statistics of one batch-norm
/// layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Tensor::ones([channels]),
            shift: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
            epsilon: BATCHNORM_EPSILON,
            momentum: BATCHNORM_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    /// Folds one training batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(self.momentum);
        let keep = T::one() - m;
        for (r, &s) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * s;
        }
        for (r, &s) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * s;
        }
    }
}

/// Per-channel batch mean and unbiased variance from a training pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    /// Training mode normalizes with batch statistics and returns them so the
    /// caller can update the running estimates; eval mode uses the running
    /// estimates from `params`. `scale`/`shift` are the recorded affine
    /// parameters (usually `params.scale` / `params.shift`).
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        params: &BatchNormParams<T>,
        training: bool,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4("batchnorm2d")?;
        let sv = self.value(scale);
        let tv = self.value(shift);
        for (name, t) in [
            ("scale", sv),
            ("shift", tv),
            ("running_mean", &params.running_mean),
            ("running_var", &params.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{name} must be [{c}], got {:?}", t.shape()),
                ));
            }
        }
        let plane = h * w;
        let count = b * plane;
        if training && count < 2 {
            return Err(Error::DegenerateBatch(count));
        }
        let eps = T::from_f64_lossy(params.epsilon);
        let xd = x.data();
        let channel_values = |ch: usize| {
            (0..b).flat_map(move |n| {
                xd[(n * c + ch) * plane..(n * c + ch + 1) * plane]
                    .iter()
                    .copied()
            })
        };

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut stats = None;
        if training {
            let m = T::from_usize(count).expect("count");
            let mut unbiased = vec![T::zero(); c];
            for ch in 0..c {
                let mu = channel_values(ch).sum::<T>() / m;
                let ss: T = channel_values(ch).map(|v| (v - mu) * (v - mu)).sum();
                mean[ch] = mu;
                var[ch] = ss / m;
                unbiased[ch] = ss / (m - T::one());
            }
            stats = Some(BatchStats {
                mean: mean.clone(),
                var: unbiased,
            });
        } else {
            mean.copy_from_slice(params.running_mean.data());
            var.copy_from_slice(params.running_var.data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

        let mut normalized = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for n in 0..b {
            for ch in 0..c {
                let range = (n * c + ch) * plane..(n * c + ch + 1) * plane;
                let (mu, is, g, s) = (mean[ch], inv_std[ch], sv.data()[ch], tv.data()[ch]);
                for ((o, z), &v) in out[range.clone()]
                    .iter_mut()
                    .zip(&mut normalized[range.clone()])
                    .zip(&xd[range])
                {
                    *z = (v - mu) * is;
                    *o = g * *z + s;
                }
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let var_out = self.push(
            value,
            Op::BatchNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
                training,
            },
        );
        Ok((var_out, stats))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    input: Var,
    scale: Var,
    shift: Var,
    normalized: &[T],
    inv_std: &[T],
    training: bool,
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let x = sink.value(input);
    let [b, c, h, w] = x.dims4("batchnorm2d").expect("validated");
    let plane = h * w;
    let dy = grad.data();
    let sv = sink.value(scale).data();

    let mut dscale = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    for n in 0..b {
        for ch in 0..c {
            let range = (n * c + ch) * plane..(n * c + ch + 1) * plane;
            for (&g, &z) in dy[range.clone()].iter().zip(&normalized[range]) {
                dshift[ch] = dshift[ch] + g;
                dscale[ch] = dscale[ch] + g * z;
            }
        }
    }

    if sink.wants(input) {
        let mut dx = vec![T::zero(); x.numel()];
        let m = T::from_usize(b * plane).expect("count");
        for ch in 0..c {
            let gamma = sv[ch];
            let is = inv_std[ch];
            // With dxhat = dy * gamma, the sums over the channel are
            // gamma * dshift and gamma * dscale.
            let sum_dxhat = gamma * dshift[ch];
            let sum_dxhat_z = gamma * dscale[ch];
            for n in 0..b {
                let range = (n * c + ch) * plane..(n * c + ch + 1) * plane;
                for ((d, &g), &z) in dx[range.clone()]
                    .iter_mut()
                    .zip(&dy[range.clone()])
                    .zip(&normalized[range])
                {
                    *d = if training {
                        is / m * (m * g * gamma - sum_dxhat - z * sum_dxhat_z)
                    } else {
                        g * gamma * is
                    };
                }
            }
        }
        sink.add(input, Tensor::new(x.shape(), dx).expect("input shape"));
    }
    sink.add(scale, Tensor::new([c], dscale).expect("scale shape"));
    sink.add(shift, Tensor::new([c], dshift).expect("shift shape"));
}
