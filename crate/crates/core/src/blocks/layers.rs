//! Convolution and dense layers, plus the per-pass forward context.

use rand_distr::{Distribution, Normal};

use crate::autodiff::{BatchNormParams, BatchStats, Tape, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-pass state threaded through a model's forward pass.
pub struct ForwardCtx<'r, T> {
    pub training: bool,
    /// Record parameters as gradient-requiring leaves.
    pub track_grads: bool,
    rng: Option<&'r mut Rng>,
    /// Parameter handles in build order.
    pub params: Vec<Var>,
    /// Batch statistics of every batch-norm layer, in build order
    /// (training only).
    pub bn_stats: Vec<BatchStats<T>>,
    /// Output shape of every top-level layer.
    pub shapes: Vec<Vec<usize>>,
}

impl<'r, T: Scalar> ForwardCtx<'r, T> {
    pub fn train(rng: &'r mut Rng) -> Self {
        Self {
            training: true,
            track_grads: true,
            rng: Some(rng),
            params: Vec::new(),
            bn_stats: Vec::new(),
            shapes: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            track_grads: false,
            rng: None,
            params: Vec::new(),
            bn_stats: Vec::new(),
            shapes: Vec::new(),
        }
    }

    /// Eval-mode pass that still records parameter gradients.
    pub fn eval_with_grads() -> Self {
        Self {
            track_grads: true,
            ..Self::eval()
        }
    }

    pub(crate) fn bind(&mut self, tape: &mut Tape<T>, value: &Tensor<T>) -> Var {
        let var = if self.track_grads {
            tape.param(value.clone())
        } else {
            tape.constant(value.clone())
        };
        self.params.push(var);
        var
    }

    pub(crate) fn dropout(&mut self, tape: &mut Tape<T>, x: Var, p: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.training => tape.dropout(x, p, true, rng),
            _ => {
                let mut unused = Rng::seed(0);
                tape.dropout(x, p, false, &mut unused)
            }
        }
    }

    pub(crate) fn batchnorm(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        params: &BatchNormParams<T>,
    ) -> Result<Var> {
        let scale = self.bind(tape, &params.scale);
        let shift = self.bind(tape, &params.shift);
        let (y, stats) = tape.batchnorm2d(x, scale, shift, params, self.training)?;
        if let Some(stats) = stats {
            self.bn_stats.push(stats);
        }
        Ok(y)
    }
}

/// Kaiming-normal weights scaled by fan-in.
pub(crate) fn kaiming<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut Rng,
) -> Tensor<T> {
    let std = (gain / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

/// Stride-1 convolution with "same" padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut Rng) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: kaiming(&[c_out, c_in, kernel, kernel], fan_in, 2.0, rng),
            bias: Tensor::zeros([c_out]),
        }
    }

    pub fn zeroed(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self {
            weight: Tensor::zeros([c_out, c_in, kernel, kernel]),
            bias: Tensor::zeros([c_out]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let w = ctx.bind(tape, &self.weight);
        let b = ctx.bind(tape, &self.bias);
        tape.conv2d(x, w, b, (self.kernel() - 1) / 2)
    }

    pub(crate) fn tensors(&self) -> [&Tensor<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: kaiming(&[fan_out, fan_in], fan_in, 1.0, rng),
            bias: Tensor::zeros([fan_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let w = ctx.bind(tape, &self.weight);
        let b = ctx.bind(tape, &self.bias);
        tape.linear(x, w, b)
    }

    pub(crate) fn tensors(&self) -> [&Tensor<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
