//! Global average pooling.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Mean of every `kernel x kernel` feature map: `[B, C, k, k] -> [B, C]`.
    pub fn global_avg_pool(&mut self, input: Var, kernel: usize) -> Result<Var> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4("global_avg_pool")?;
        if h != kernel || w != kernel {
            return Err(Error::shape(
                "global_avg_pool",
                format!("pool size {kernel} does not match a {h}x{w} feature map"),
            ));
        }
        let plane = h * w;
        let inv = T::from_usize(plane).expect("plane size").recip();
        let out = x
            .data()
            .chunks_exact(plane)
            .map(|map| map.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new([b, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { input }))
    }
}

pub(crate) fn backward<T: Scalar>(input: Var, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    if !sink.wants(input) {
        return;
    }
    let x = sink.value(input);
    let [_, _, h, w] = x.dims4("global_avg_pool").expect("validated");
    let plane = h * w;
    let inv = T::from_usize(plane).expect("plane size").recip();
    let mut dx = Vec::with_capacity(x.numel());
    for &g in grad.data() {
        dx.extend(std::iter::repeat_n(g * inv, plane));
    }
    sink.add(input, Tensor::new(x.shape(), dx).expect("input shape"));
}
