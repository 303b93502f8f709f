//! Inverted dropout.

use rand::Rng as _;

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Inverted dropout: in training each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Evaluation
    /// and `p == 0` pass the input through untouched.
    pub fn dropout(&mut self, input: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape(), out)?;
        Ok(self.push(value, Op::Dropout { input, mask }))
    }
}

pub(crate) fn backward<T: Scalar>(
    input: Var,
    mask: &[T],
    mut grad: Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    for (g, &m) in grad.data_mut().iter_mut().zip(mask) {
        *g = *g * m;
    }
    sink.add(input, grad);
}
