//! Forward and backward rules of every tape op.

pub(crate) mod attention;
pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pool;
pub(crate) mod softmax;
pub(crate) mod stochastic;

use super::{GradSink, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(super) fn backward<T: Scalar>(
    op: &Op<T>,
    output: &Tensor<T>,
    grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            padding,
        } => conv::backward(*input, *weight, *bias, *padding, &grad, sink),
        Op::MatMul {
            a,
            b,
            trans_a,
            trans_b,
            dims,
        } => linalg::backward(*a, *b, *trans_a, *trans_b, *dims, &grad, sink),
        Op::Softmax { input } => softmax::backward(*input, output, grad, sink),
        Op::BatchNorm {
            input,
            scale,
            shift,
            normalized,
            inv_std,
            training,
        } => norm::backward(
            *input, *scale, *shift, normalized, inv_std, *training, &grad, sink,
        ),
        Op::Dropout { input, mask } => stochastic::backward(*input, mask, grad, sink),
        Op::GlobalAvgPool { input } => pool::backward(*input, &grad, sink),
        Op::Bce { pred, target } => loss::backward(*pred, target, &grad, sink),
        Op::Add { a, b } => elementwise::add_backward(*a, *b, grad, sink),
        Op::Mul { a, b } => elementwise::mul_backward(*a, *b, &grad, sink),
        Op::Scale { input, factor } => elementwise::scale_backward(*input, *factor, grad, sink),
        Op::Relu { input } => elementwise::relu_backward(*input, output, grad, sink),
        Op::Sigmoid { input } => elementwise::sigmoid_backward(*input, output, grad, sink),
        Op::Linear {
            input,
            weight,
            bias,
        } => elementwise::linear_backward(*input, *weight, *bias, &grad, sink),
        Op::Sum { input } => elementwise::sum_backward(*input, &grad, sink),
        Op::Reshape { input } => elementwise::reshape_backward(*input, grad, sink),
        Op::GatedResidual {
            base,
            branch,
            gamma,
        } => elementwise::gated_residual_backward(*base, *branch, *gamma, grad, sink),
        Op::Attention {
            q,
            k,
            v,
            stats,
            dims,
        } => attention::backward(*q, *k, *v, stats, *dims, &grad, sink),
    }
}
