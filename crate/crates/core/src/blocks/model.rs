//! The four network variants, built from residual, non-local and plain layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormParams, BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::layers::{Conv, Dense, ForwardCtx};
use super::nonlocal::NonLocalBlock;
use super::residual::ResidualBlock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Two residual blocks, no attention.
    BasicResnet,
    /// Residual and non-local blocks interleaved.
    LocalGlobal,
    /// A plain convolution followed by non-local blocks only.
    AllAtn,
    /// `AllAtn` with a deeper second attention stage.
    AllAtnBig,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::BasicResnet,
        Variant::LocalGlobal,
        Variant::AllAtn,
        Variant::AllAtnBig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BasicResnet => "basic-resnet",
            Variant::LocalGlobal => "local-global",
            Variant::AllAtn => "all-atn",
            Variant::AllAtnBig => "all-atn-big",
        }
    }

    /// Stable numeric tag used in checkpoints.
    pub fn tag(self) -> u32 {
        match self {
            Variant::BasicResnet => 0,
            Variant::LocalGlobal => 1,
            Variant::AllAtn => 2,
            Variant::AllAtnBig => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown variant tag {tag}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant '{s}' (expected basic-resnet, local-global, all-atn or all-atn-big)"
                ))
            })
    }
}

/// Architecture choice plus its width/regularization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub channels: usize,
    /// Side of the square single-channel input; also the pooling kernel.
    pub input_size: usize,
    pub dropout_p1: f64,
    pub dropout_p2: f64,
    /// Channel reduction of the attention query/key projections.
    pub attention_reduction: usize,
    /// Non-local blocks in the second stage of `AllAtnBig`.
    pub big_stack_depth: usize,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            channels: 32,
            input_size: 32,
            dropout_p1: 0.1,
            dropout_p2: 0.2,
            attention_reduction: 8,
            big_stack_depth: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.input_size == 0 {
            return Err(Error::Config(
                "channels and input size must be positive".into(),
            ));
        }
        for p in [self.dropout_p1, self.dropout_p2] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidProbability(p));
            }
        }
        if self.variant == Variant::AllAtnBig && self.big_stack_depth == 0 {
            return Err(Error::Config(
                "all-atn-big needs at least one block in its second stage".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Residual,
    NonLocal,
    Conv,
    Dropout,
    AvgPool,
    Dense,
}

// A model holds a handful of layers; boxing the large variants buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Residual(ResidualBlock<T>),
    NonLocal(NonLocalBlock<T>),
    /// 3x3 convolution without normalization or activation.
    Conv(Conv<T>),
    Dropout(f64),
    AvgPool(usize),
    /// Single-neuron head followed by a sigmoid.
    Dense(Dense<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Residual(_) => LayerKind::Residual,
            Layer::NonLocal(_) => LayerKind::NonLocal,
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::AvgPool(_) => LayerKind::AvgPool,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Residual(b) => b.tensors(),
            Layer::NonLocal(b) => b.tensors(),
            Layer::Conv(c) => c.tensors().into(),
            Layer::Dense(d) => d.tensors().into(),
            Layer::Dropout(_) | Layer::AvgPool(_) => Vec::new(),
        }
    }

    /// Names of the learnable tensors, matching the order of `tensors`.
    fn tensor_names(&self) -> Vec<&'static str> {
        match self {
            Layer::Residual(b) => {
                let mut names = vec![
                    "conv1.weight",
                    "conv1.bias",
                    "bn1.scale",
                    "bn1.shift",
                    "conv2.weight",
                    "conv2.bias",
                    "bn2.scale",
                    "bn2.shift",
                ];
                if b.skip.is_some() {
                    names.extend(["skip.weight", "skip.bias"]);
                }
                names
            }
            Layer::NonLocal(_) => vec![
                "query.weight",
                "query.bias",
                "key.weight",
                "key.bias",
                "value.weight",
                "value.bias",
                "gamma",
            ],
            Layer::Conv(_) | Layer::Dense(_) => vec!["weight", "bias"],
            Layer::Dropout(_) | Layer::AvgPool(_) => Vec::new(),
        }
    }

    fn label(&self) -> &'static str {
        match self.kind() {
            LayerKind::Residual => "residual",
            LayerKind::NonLocal => "non_local",
            LayerKind::Conv => "conv",
            LayerKind::Dropout => "dropout",
            LayerKind::AvgPool => "avg_pool",
            LayerKind::Dense => "dense",
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Residual(b) => b.tensors_mut(),
            Layer::NonLocal(b) => b.tensors_mut(),
            Layer::Conv(c) => c.tensors_mut().into(),
            Layer::Dense(d) => d.tensors_mut().into(),
            Layer::Dropout(_) | Layer::AvgPool(_) => Vec::new(),
        }
    }
}

/// Number of layers of each kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub residual: usize,
    pub non_local: usize,
    pub conv: usize,
    pub dropout: usize,
    pub avg_pool: usize,
    pub dense: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Model<T> {
    /// Builds the layer sequence of `spec.variant` with fresh weights.
    ///
    /// ```text
    /// basic-resnet  Res  --   Drop  Res  --   Drop  Pool  Dense
    /// local-global  Res  NL   Drop  Res  NL   Drop  Pool  Dense
    /// all-atn       Conv NL   Drop  --   NL   Drop  Pool  Dense
    /// all-atn-big   Conv NL   Drop  NL x depth  Drop  Pool  Dense
    /// ```
    pub fn build(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let r = spec.attention_reduction;
        let nl = |rng: &mut Rng| NonLocalBlock::new(c, r, rng).map(Layer::NonLocal);
        let mut layers = Vec::new();
        match spec.variant {
            Variant::BasicResnet => {
                layers.push(Layer::Residual(ResidualBlock::new(1, c, rng)));
                layers.push(Layer::Dropout(spec.dropout_p1));
                layers.push(Layer::Residual(ResidualBlock::new(c, c, rng)));
                layers.push(Layer::Dropout(spec.dropout_p2));
            }
            Variant::LocalGlobal => {
                layers.push(Layer::Residual(ResidualBlock::new(1, c, rng)));
                layers.push(nl(rng)?);
                layers.push(Layer::Dropout(spec.dropout_p1));
                layers.push(Layer::Residual(ResidualBlock::new(c, c, rng)));
                layers.push(nl(rng)?);
                layers.push(Layer::Dropout(spec.dropout_p2));
            }
            Variant::AllAtn | Variant::AllAtnBig => {
                layers.push(Layer::Conv(Conv::new(1, c, 3, rng)));
                layers.push(nl(rng)?);
                layers.push(Layer::Dropout(spec.dropout_p1));
                let depth = if spec.variant == Variant::AllAtnBig {
                    spec.big_stack_depth
                } else {
                    1
                };
                for _ in 0..depth {
                    layers.push(nl(rng)?);
                }
                layers.push(Layer::Dropout(spec.dropout_p2));
            }
        }
        layers.push(Layer::AvgPool(spec.input_size));
        layers.push(Layer::Dense(Dense::new(c, 1, rng)));
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for layer in &self.layers {
            let slot = match layer.kind() {
                LayerKind::Residual => &mut c.residual,
                LayerKind::NonLocal => &mut c.non_local,
                LayerKind::Conv => &mut c.conv,
                LayerKind::Dropout => &mut c.dropout,
                LayerKind::AvgPool => &mut c.avg_pool,
                LayerKind::Dense => &mut c.dense,
            };
            *slot += 1;
        }
        c
    }

    pub fn non_local_blocks(&self) -> impl Iterator<Item = &NonLocalBlock<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::NonLocal(b) => Some(b),
            _ => None,
        })
    }

    pub fn non_local_blocks_mut(&mut self) -> impl Iterator<Item = &mut NonLocalBlock<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::NonLocal(b) => Some(b),
            _ => None,
        })
    }

    /// Copy of the model with every non-local block removed.
    pub fn without_non_local(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l, Layer::NonLocal(_)))
                .cloned()
                .collect(),
        }
    }

    /// Learnable tensors in build order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(Layer::tensors_mut)
            .collect()
    }

    /// Names of the learnable tensors in build order, such as
    /// `layer1.non_local.gamma`.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensor_names()
                    .into_iter()
                    .map(move |n| format!("layer{i}.{}.{n}", l.label()))
            })
            .collect()
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn norms(&self) -> Vec<&BatchNormParams<T>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Residual(b) => b.norms().to_vec(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn norms_mut(&mut self) -> Vec<&mut BatchNormParams<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Residual(b) => b.norms_mut().into_iter().collect(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// Records a forward pass over `[B, 1, S, S]` inputs and returns the
    /// `[B]` probabilities.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<Var> {
        let [b, c, h, w] = tape.value(input).dims4("model")?;
        let s = self.spec.input_size;
        if c != 1 || h != s || w != s {
            return Err(Error::shape(
                "model",
                format!("expected [B, 1, {s}, {s}] patches, got [{b}, {c}, {h}, {w}]"),
            ));
        }
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Residual(block) => block.forward(tape, x, ctx)?,
                Layer::NonLocal(block) => block.forward(tape, x, ctx)?,
                Layer::Conv(conv) => conv.forward(tape, x, ctx)?,
                Layer::Dropout(p) => ctx.dropout(tape, x, *p)?,
                Layer::AvgPool(k) => tape.global_avg_pool(x, *k)?,
                Layer::Dense(dense) => {
                    let logits = dense.forward(tape, x, ctx)?;
                    tape.sigmoid(logits)
                }
            };
            ctx.shapes.push(tape.value(x).shape().to_vec());
        }
        tape.reshape(x, [b])
    }

    /// Applies the batch statistics gathered by a training pass to the
    /// running estimates.
    pub fn commit_bn_stats(&mut self, stats: Vec<BatchStats<T>>) {
        let mut it = stats.into_iter();
        for layer in &mut self.layers {
            if let Layer::Residual(block) = layer {
                block.commit(&mut it);
            }
        }
    }

    /// Eval-mode probabilities for a `[B, 1, S, S]` batch.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let p = self.forward(&mut tape, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |c: &Conv<T>| Conv {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let bn = |b: &BatchNormParams<T>| BatchNormParams {
            scale: b.scale.cast(),
            shift: b.shift.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
            epsilon: b.epsilon,
            momentum: b.momentum,
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Residual(r) => Layer::Residual(ResidualBlock {
                    conv1: conv(&r.conv1),
                    bn1: bn(&r.bn1),
                    conv2: conv(&r.conv2),
                    bn2: bn(&r.bn2),
                    skip: r.skip.as_ref().map(conv),
                }),
                Layer::NonLocal(n) => Layer::NonLocal(NonLocalBlock {
                    query: conv(&n.query),
                    key: conv(&n.key),
                    value: conv(&n.value),
                    gamma: n.gamma.cast(),
                }),
                Layer::Conv(c) => Layer::Conv(conv(c)),
                Layer::Dropout(p) => Layer::Dropout(*p),
                Layer::AvgPool(k) => Layer::AvgPool(*k),
                Layer::Dense(d) => Layer::Dense(Dense {
                    weight: d.weight.cast(),
                    bias: d.bias.cast(),
                }),
            })
            .collect();
        Model {
            spec: self.spec.clone(),
            layers,
        }
    }
}
