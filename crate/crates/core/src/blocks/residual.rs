//! Residual block: two 3x3 conv + batch-norm stages and a shortcut
//! (identity, or a 1x1 projection when the width changes).

use crate::autodiff::{BatchNormParams, BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::layers::{Conv, ForwardCtx};

/// `ReLU(BN2(conv2(ReLU(BN1(conv1(x))))) + skip(x))` with 3x3 convolutions.
///
/// `skip` is a 1x1 projection when the channel count changes and the
/// identity otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv<T>,
    pub bn1: BatchNormParams<T>,
    pub conv2: Conv<T>,
    pub bn2: BatchNormParams<T>,
    pub skip: Option<Conv<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(c_in: usize, channels: usize, rng: &mut Rng) -> Self {
        Self {
            conv1: Conv::new(c_in, channels, 3, rng),
            bn1: BatchNormParams::new(channels),
            conv2: Conv::new(channels, channels, 3, rng),
            bn2: BatchNormParams::new(channels),
            skip: (c_in != channels).then(|| Conv::new(c_in, channels, 1, rng)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn channels(&self) -> usize {
        self.conv1.out_channels()
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let c_in = tape.value(x).dims4("residual_block")?[1];
        if c_in != self.in_channels() {
            return Err(Error::shape(
                "residual_block",
                format!("expected {} input channels, got {c_in}", self.in_channels()),
            ));
        }
        let h = self.conv1.forward(tape, x, ctx)?;
        let h = ctx.batchnorm(tape, h, &self.bn1)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h, ctx)?;
        let h = ctx.batchnorm(tape, h, &self.bn2)?;
        let shortcut = match &self.skip {
            Some(proj) => proj.forward(tape, x, ctx)?,
            None => x,
        };
        let sum = tape.add(h, shortcut)?;
        Ok(tape.relu(sum))
    }

    pub(crate) fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.conv1.tensors().into();
        out.extend([&self.bn1.scale, &self.bn1.shift]);
        out.extend(self.conv2.tensors());
        out.extend([&self.bn2.scale, &self.bn2.shift]);
        if let Some(skip) = &self.skip {
            out.extend(skip.tensors());
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.conv1.tensors_mut().into();
        out.extend([&mut self.bn1.scale, &mut self.bn1.shift]);
        out.extend(self.conv2.tensors_mut());
        out.extend([&mut self.bn2.scale, &mut self.bn2.shift]);
        if let Some(skip) = &mut self.skip {
            out.extend(skip.tensors_mut());
        }
        out
    }

    /// Learnable tensors and running statistics, borrowed together.
    pub(crate) fn split_state_mut(&mut self) -> (Vec<&mut Tensor<T>>, [&mut Tensor<T>; 4]) {
        let Self {
            conv1,
            bn1,
            conv2,
            bn2,
            skip,
        } = self;
        let mut params: Vec<&mut Tensor<T>> = conv1.tensors_mut().into();
        params.extend([&mut bn1.scale, &mut bn1.shift]);
        params.extend(conv2.tensors_mut());
        params.extend([&mut bn2.scale, &mut bn2.shift]);
        if let Some(s) = skip {
            params.extend(s.tensors_mut());
        }
        let stats = [
            &mut bn1.running_mean,
            &mut bn1.running_var,
            &mut bn2.running_mean,
            &mut bn2.running_var,
        ];
        (params, stats)
    }

    pub(crate) fn norms_mut(&mut self) -> [&mut BatchNormParams<T>; 2] {
        [&mut self.bn1, &mut self.bn2]
    }

    pub(crate) fn norms(&self) -> [&BatchNormParams<T>; 2] {
        [&self.bn1, &self.bn2]
    }

    pub(crate) fn commit(&mut self, stats: &mut impl Iterator<Item = BatchStats<T>>) {
        for bn in self.norms_mut() {
            if let Some(s) = stats.next() {
                bn.update_running(&s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;

    fn run(block: &ResidualBlock<f64>, x: &Tensor<f64>, training: bool) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut rng = Rng::seed(0);
        let mut ctx = if training {
            ForwardCtx::train(&mut rng)
        } else {
            ForwardCtx::eval()
        };
        let y = block.forward(&mut tape, xv, &mut ctx).unwrap();
        tape.value(y).clone()
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_reduce_to_relu() {
        let mut rng = Rng::seed(1);
        let mut block = ResidualBlock::<f64>::new(32, 32, &mut rng);
        block.conv1 = Conv::zeroed(32, 32, 3);
        block.conv2 = Conv::zeroed(32, 32, 3);
        let x = random(&[2, 32, 32, 32], &mut rng);
        for training in [true, false] {
            let y = run(&block, &x, training);
            for (a, b) in y.data().iter().zip(x.data()) {
                assert_eq!(*a, b.max(0.0));
            }
        }
    }

    #[test]
    fn output_shape_for_both_input_widths() {
        let mut rng = Rng::seed(2);
        for c_in in [1, 32] {
            let block = ResidualBlock::<f32>::new(c_in, 32, &mut rng);
            assert_eq!(block.skip.is_some(), c_in != 32);
            let x = Tensor::from_fn([2, c_in, 32, 32], |i| (i % 7) as f32 / 7.0);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let y = block
                .forward(&mut tape, xv, &mut ForwardCtx::eval())
                .unwrap();
            assert_eq!(tape.value(y).shape(), [2, 32, 32, 32]);
        }
    }

    #[test]
    fn matches_composed_primitives() {
        let mut rng = Rng::seed(3);
        let block = ResidualBlock::<f64>::new(2, 4, &mut rng);
        let x = random(&[2, 2, 5, 5], &mut rng);
        let got = run(&block, &x, true);

        // Same computation spelled out with raw tape primitives.
        let mut t = Tape::new();
        let xv = t.constant(x);
        let c = |t: &mut Tape<f64>, v: &Tensor<f64>| t.constant(v.clone());
        let (w1, b1) = (c(&mut t, &block.conv1.weight), c(&mut t, &block.conv1.bias));
        let h = t.conv2d(xv, w1, b1, 1).unwrap();
        let (s1, o1) = (c(&mut t, &block.bn1.scale), c(&mut t, &block.bn1.shift));
        let (h, _) = t.batchnorm2d(h, s1, o1, &block.bn1, true).unwrap();
        let h = t.relu(h);
        let (w2, b2) = (c(&mut t, &block.conv2.weight), c(&mut t, &block.conv2.bias));
        let h = t.conv2d(h, w2, b2, 1).unwrap();
        let (s2, o2) = (c(&mut t, &block.bn2.scale), c(&mut t, &block.bn2.shift));
        let (h, _) = t.batchnorm2d(h, s2, o2, &block.bn2, true).unwrap();
        let skip = block.skip.as_ref().unwrap();
        let (ws, bs) = (c(&mut t, &skip.weight), c(&mut t, &skip.bias));
        let sc = t.conv2d(xv, ws, bs, 0).unwrap();
        let sum = t.add(h, sc).unwrap();
        let want = t.relu(sum);
        for (a, b) in got.data().iter().zip(t.value(want).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let mut rng = Rng::seed(4);
        let block = ResidualBlock::<f32>::new(1, 8, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones([1, 3, 4, 4]));
        assert!(block
            .forward(&mut tape, x, &mut ForwardCtx::eval())
            .is_err());
    }

    #[test]
    fn bind_order_matches_tensor_order() {
        let mut rng = Rng::seed(5);
        let block = ResidualBlock::<f32>::new(1, 8, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones([2, 1, 4, 4]));
        let mut ctx = ForwardCtx::eval();
        block.forward(&mut tape, x, &mut ctx).unwrap();
        let tensors = block.tensors();
        assert_eq!(ctx.params.len(), tensors.len());
        for (v, t) in ctx.params.iter().zip(tensors) {
            assert_eq!(tape.value(*v), t);
        }
    }
}
