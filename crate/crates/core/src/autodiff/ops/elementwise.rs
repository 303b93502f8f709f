//! Pointwise maps, reductions, reshapes and the dense head.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let value = zip_map(av, bv, |x, y| x + y);
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let value = zip_map(av, bv, |x, y| x * y);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid { input })
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum { input })
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// `x · wᵀ + b` for `x: [B, In]`, `w: [Out, In]`, `b: [Out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[batch, fan_in], &[fan_out, w_in]) = (x.shape(), w.shape()) else {
            return Err(Error::shape(
                "linear",
                format!(
                    "need [B, In] and [Out, In], got {:?} and {:?}",
                    x.shape(),
                    w.shape()
                ),
            ));
        };
        if fan_in != w_in || b.shape() != [fan_out] {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?} and bias {:?} disagree",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        let mut out: Vec<T> = (0..batch).flat_map(|_| b.data().iter().copied()).collect();
        T::gemm(
            batch,
            fan_in,
            fan_out,
            x.data(),
            false,
            w.data(),
            true,
            &mut out,
            T::one(),
        );
        let value = Tensor::new([batch, fan_out], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// `base + gamma · branch` with a learnable one-element `gamma`.
    pub fn gated_residual(&mut self, base: Var, branch: Var, gamma: Var) -> Result<Var> {
        let (x, y, g) = (self.value(base), self.value(branch), self.value(gamma));
        same_shape("gated_residual", x, y)?;
        if g.numel() != 1 {
            return Err(Error::shape(
                "gated_residual",
                format!("gate must hold one value, got {:?}", g.shape()),
            ));
        }
        let gv = g.item();
        let value = zip_map(x, y, |a, b| a + gv * b);
        Ok(self.push(
            value,
            Op::GatedResidual {
                base,
                branch,
                gamma,
            },
        ))
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn add_backward<T: Scalar>(a: Var, b: Var, grad: Tensor<T>, sink: &mut GradSink<'_, T>) {
    if sink.wants(a) && sink.wants(b) {
        sink.add(a, grad.clone());
        sink.add(b, grad);
    } else if sink.wants(a) {
        sink.add(a, grad);
    } else {
        sink.add(b, grad);
    }
}

pub(crate) fn mul_backward<T: Scalar>(
    a: Var,
    b: Var,
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let (av, bv) = (sink.value(a), sink.value(b));
    if sink.wants(a) {
        sink.add(a, zip_map(grad, bv, |g, y| g * y));
    }
    if sink.wants(b) {
        sink.add(b, zip_map(grad, av, |g, x| g * x));
    }
}

pub(crate) fn scale_backward<T: Scalar>(
    input: Var,
    factor: T,
    mut grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    grad.data_mut().iter_mut().for_each(|g| *g = *g * factor);
    sink.add(input, grad);
}

pub(crate) fn relu_backward<T: Scalar>(
    input: Var,
    output: &Tensor<T>,
    mut grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
    sink.add(input, grad);
}

pub(crate) fn sigmoid_backward<T: Scalar>(
    input: Var,
    output: &Tensor<T>,
    mut grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        *g = *g * y * (T::one() - y);
    }
    sink.add(input, grad);
}

pub(crate) fn sum_backward<T: Scalar>(input: Var, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let shape = sink.value(input).shape();
    sink.add(input, Tensor::full(shape, grad.item()));
}

pub(crate) fn reshape_backward<T: Scalar>(input: Var, grad: Tensor<T>, sink: &mut GradSink<'_, T>) {
    let shape = sink.value(input).shape();
    sink.add(input, grad.reshape(shape).expect("same element count"));
}

pub(crate) fn linear_backward<T: Scalar>(
    input: Var,
    weight: Var,
    bias: Var,
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let (x, w) = (sink.value(input), sink.value(weight));
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let fan_out = w.shape()[0];
    if sink.wants(input) {
        let mut dx = vec![T::zero(); x.numel()];
        T::gemm(
            batch,
            fan_out,
            fan_in,
            grad.data(),
            false,
            w.data(),
            false,
            &mut dx,
            T::zero(),
        );
        sink.add(input, Tensor::new(x.shape(), dx).expect("input shape"));
    }
    if sink.wants(weight) {
        let mut dw = vec![T::zero(); w.numel()];
        T::gemm(
            fan_out,
            batch,
            fan_in,
            grad.data(),
            true,
            x.data(),
            false,
            &mut dw,
            T::zero(),
        );
        sink.add(weight, Tensor::new(w.shape(), dw).expect("weight shape"));
    }
    if sink.wants(bias) {
        let mut db = vec![T::zero(); fan_out];
        for row in grad.data().chunks_exact(fan_out) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d = *d + g;
            }
        }
        sink.add(bias, Tensor::new([fan_out], db).expect("bias shape"));
    }
}

pub(crate) fn gated_residual_backward<T: Scalar>(
    base: Var,
    branch: Var,
    gamma: Var,
    grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let y = sink.value(branch);
    let g = sink.value(gamma).item();
    if sink.wants(gamma) {
        let dg: T = grad.data().iter().zip(y.data()).map(|(&d, &v)| d * v).sum();
        let shape = sink.value(gamma).shape();
        sink.add(gamma, Tensor::new(shape, vec![dg]).expect("gate shape"));
    }
    if sink.wants(branch) {
        sink.add(branch, grad.map(|d| d * g));
    }
    sink.add(base, grad);
}
