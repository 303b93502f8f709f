//! Network building blocks and the four model variants.
//!
//! Residual blocks (two 3x3 convolutions) extract local features,
//! non-local blocks (all-pairs attention over spatial locations, gated by
//! a learnable scalar that starts at zero) extract global ones.

mod checkpoint;
mod layers;
mod model;
mod nonlocal;
mod residual;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Conv, Dense, ForwardCtx};
pub use model::{Census, Layer, LayerKind, Model, ModelSpec, Variant};
pub use nonlocal::NonLocalBlock;
pub use residual::ResidualBlock;
