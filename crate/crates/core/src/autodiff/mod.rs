//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass in execution
//! order, so inputs always precede their consumers. [`Tape::backward`]
//! walks the records in reverse and accumulates gradients additively,
//! which handles fan-out. A tape belongs to a single forward/backward pass
//! and is dropped afterwards.

mod ops;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) use ops::attention::attention_weights;
pub use ops::conv::{conv2d_output_size, im2col};
pub use ops::elementwise::sigmoid;
pub use ops::loss::BCE_EPSILON;
pub use ops::norm::{BatchNormParams, BatchStats, BATCHNORM_EPSILON, BATCHNORM_MOMENTUM};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kinds of recorded operations, used for introspection, gradient-check
/// reports and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MatMul,
    Softmax,
    BatchNorm,
    Dropout,
    GlobalAvgPool,
    Bce,
    Add,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Linear,
    Sum,
    Reshape,
    GatedResidual,
    Attention,
}

impl OpKind {
    /// Every operation that propagates gradients.
    pub const DIFFERENTIABLE: [OpKind; 17] = [
        OpKind::Conv2d,
        OpKind::MatMul,
        OpKind::Softmax,
        OpKind::BatchNorm,
        OpKind::Dropout,
        OpKind::GlobalAvgPool,
        OpKind::Bce,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Linear,
        OpKind::Sum,
        OpKind::Reshape,
        OpKind::GatedResidual,
        OpKind::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::MatMul => "matmul",
            OpKind::Softmax => "softmax_rows",
            OpKind::BatchNorm => "batchnorm2d",
            OpKind::Dropout => "dropout",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Bce => "bce_loss",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Linear => "linear",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
            OpKind::GatedResidual => "gated_residual",
            OpKind::Attention => "attention",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(OpKind::Leaf)
            .chain(OpKind::DIFFERENTIABLE)
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown op '{s}'")))
    }
}

/// Saved context needed to run each operation backwards.
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        dims: ops::linalg::MatDims,
    },
    Softmax {
        input: Var,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Sum {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    GatedResidual {
        base: Var,
        branch: Var,
        gamma: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        stats: Vec<(T, T)>,
        dims: ops::attention::AttnDims,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Bce { .. } => OpKind::Bce,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Linear { .. } => OpKind::Linear,
            Op::Sum { .. } => OpKind::Sum,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::GatedResidual { .. } => OpKind::GatedResidual,
            Op::Attention { .. } => OpKind::Attention,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::BatchNorm {
                input,
                scale,
                shift,
                ..
            } => vec![input, scale, shift],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::GatedResidual {
                base,
                branch,
                gamma,
            } => vec![base, branch, gamma],
            Op::Attention { q, k, v, .. } => vec![q, k, v],
            Op::Bce { pred, .. } => vec![pred],
            Op::Softmax { input }
            | Op::Dropout { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Scale { input, .. }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Sum { input }
            | Op::Reshape { input } => vec![input],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One entry of the recorded trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub op: OpKind,
    pub inputs: Vec<Var>,
    pub output: Var,
    pub requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records an input whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.nodes.iter().enumerate().map(|(i, n)| Record {
            op: n.op.kind(),
            inputs: n.op.inputs(),
            output: Var(i),
            requires_grad: n.requires_grad,
        })
    }

    /// Deliberately corrupts the backward rule of `kind` on this tape.
    ///
    /// Only useful for checking that gradient verification catches a
    /// broken rule.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a computed value; it needs a gradient iff any input does.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::Rank(loss_value.shape().to_vec()));
        }
        self.backward_from(loss, Tensor::ones(loss_value.shape()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`)
    /// back to every leaf that requires a gradient.
    pub fn backward_from(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed {:?} does not match output {out_shape:?}",
                    seed.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut grad) = grads[i].take() else {
                continue;
            };
            if self.fault == Some(node.op.kind()) {
                let bump = T::from_f64_lossy(1.5);
                grad.data_mut().iter_mut().for_each(|g| *g = *g * bump);
            }
            let mut sink = GradSink {
                tape: self,
                grads: &mut grads,
            };
            ops::backward(&node.op, &node.value, grad, &mut sink);
        }

        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Accumulates gradient contributions into input slots.
pub(crate) struct GradSink<'a, T> {
    tape: &'a Tape<T>,
    grads: &'a mut Vec<Option<Tensor<T>>>,
}

impl<'a, T: Scalar> GradSink<'a, T> {
    pub(crate) fn wants(&self, var: Var) -> bool {
        self.tape.nodes[var.0].requires_grad
    }

    pub(crate) fn value(&self, var: Var) -> &'a Tensor<T> {
        &self.tape.nodes[var.0].value
    }

    pub(crate) fn add(&mut self, var: Var, grad: Tensor<T>) {
        if !self.wants(var) {
            return;
        }
        debug_assert_eq!(grad.shape(), self.value(var).shape());
        match &mut self.grads[var.0] {
            Some(acc) => acc.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }
}

/// Gradients of the leaves that requested them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}
