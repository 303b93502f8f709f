//! Adam optimizer with bias-corrected moments.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::TrainConfig;

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of steps taken.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update with bias-corrected moments.
///
/// All gradients are checked before anything is modified, so a non-finite
/// gradient leaves parameters and state untouched. `names` labels the
/// parameters in the error message.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    config: &TrainConfig,
    names: &[String],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: i,
                name: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let one = T::one();
    let correction1 = T::from_f64_lossy(1.0 - config.beta1.powi(t));
    let correction2 = T::from_f64_lossy(1.0 - config.beta2.powi(t));
    let lr = T::from_f64_lossy(config.learning_rate);
    let eps = T::from_f64_lossy(config.adam_epsilon);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let values = p.data_mut().iter_mut();
        let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
        for ((theta, &gi), (mi, vi)) in values.zip(g.data()).zip(moments) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
