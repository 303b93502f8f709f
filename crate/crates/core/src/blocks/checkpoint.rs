//! Model checkpoint container.
//!
//! ```text
//! "LGNM" | version u32 | variant tag u32 | channels u32      (16 bytes, LE)
//! learnable parameters, build order        f32 LE each
//! batch-norm running mean/var, build order f32 LE each
//! ```
//!
//! Every other architecture setting takes its default value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::model::{Layer, Model, ModelSpec, Variant};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LGNM";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

impl<T: Scalar> Model<T> {
    fn state(&self) -> Vec<&Tensor<T>> {
        let mut out = self.params();
        for bn in self.norms() {
            out.push(&bn.running_mean);
            out.push(&bn.running_var);
        }
        out
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut params: Vec<&mut Tensor<T>> = Vec::new();
        let mut stats: Vec<&mut Tensor<T>> = Vec::new();
        for layer in self.layers_mut() {
            match layer {
                Layer::Residual(block) => {
                    let (p, s) = block.split_state_mut();
                    params.extend(p);
                    stats.extend(s);
                }
                other => params.extend(other.tensors_mut()),
            }
        }
        params.extend(stats);
        params
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let state = self.state();
        let total: usize = state.iter().map(|t| t.numel()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * total);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.variant().tag().to_le_bytes());
        out.extend_from_slice(&(self.spec().channels as u32).to_le_bytes());
        for t in state {
            for v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!(
                "checkpoint header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let variant = Variant::from_tag(word(8))?;
        let mut spec = ModelSpec::new(variant);
        spec.channels = word(12) as usize;
        let mut model = Model::build(spec, &mut Rng::seed(0))?;

        let payload = &bytes[HEADER_LEN..];
        let expected: usize = model.state().iter().map(|t| t.numel()).sum::<usize>() * 4;
        if payload.len() < expected {
            return Err(Error::Truncated(format!(
                "checkpoint payload has {} bytes, expected {expected}",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after checkpoint payload",
                payload.len() - expected
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
        for t in model.state_mut() {
            for v in t.data_mut() {
                *v = values.next().expect("length checked");
            }
        }
        Ok(model)
    }
}

pub fn write_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Model::from_checkpoint_bytes(&bytes)
}
