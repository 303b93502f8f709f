//! Residual and non-local (self-attention) convolutional networks for
//! binary classification of 32x32 single-channel patches.
//!
//! The crate carries its own small reverse-mode autodiff engine
//! ([`autodiff`]), the network building blocks and the four model
//! variants ([`blocks`]), the Adam / cross-validation training protocol
//! ([`training`]), ROC/AUC and confusion metrics ([`metrics`]), the `.lgnd`
//! dataset format with a synthetic patch generator ([`data`]) and a
//! finite-difference gradient checker ([`gradcheck`]).

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, OpKind, Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
