//! Patch datasets: container, `.lgnd` file format, synthetic generator.

mod format;
mod synth;

pub use format::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION, HEADER_LEN};
pub use synth::{synth_generate, SynthConfig};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of every patch.
pub const PATCH_SIDE: usize = 32;
/// Pixels per patch.
pub const PATCH_PIXELS: usize = PATCH_SIDE * PATCH_SIDE;

/// Labelled 32x32 single-channel patches with intensities in [0, 1].
/// Label 1 marks the positive (malignant) class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchDataset {
    pixels: Vec<f32>,
    labels: Vec<u8>,
    ids: Vec<String>,
    seen: HashSet<String>,
}

impl PatchDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: impl Into<String>, patch: &[f32], label: u8) -> Result<()> {
        let id = id.into();
        if patch.len() != PATCH_PIXELS {
            return Err(Error::shape(
                "dataset",
                format!("patch has {} pixels, expected {PATCH_PIXELS}", patch.len()),
            ));
        }
        if label > 1 {
            return Err(Error::InvalidLabel(f64::from(label)));
        }
        if let Some(&value) = patch.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::IntensityRange {
                sample: self.len(),
                value,
            });
        }
        if self.seen.contains(&id) {
            return Err(Error::Malformed(format!("duplicate sample id '{id}'")));
        }
        self.pixels.extend_from_slice(patch);
        self.labels.push(label);
        self.seen.insert(id.clone());
        self.ids.push(id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.pixels[i * PATCH_PIXELS..(i + 1) * PATCH_PIXELS]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Stacks the selected patches into a `[B, 1, 32, 32]` tensor.
    pub fn batch<T: crate::scalar::Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * PATCH_PIXELS);
        for &i in indices {
            data.extend(
                self.patch(i)
                    .iter()
                    .map(|&v| T::from_f64_lossy(f64::from(v))),
            );
        }
        Tensor::new([indices.len(), 1, PATCH_SIDE, PATCH_SIDE], data).expect("non-empty batch")
    }
}

/// Linearly maps `[lo, hi]` onto `[0, 1]`, clipping outside values.
pub fn normalize_patch(raw: &[f64], lo: f64, hi: f64) -> Result<Vec<f32>> {
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Config(format!(
            "normalization window needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    if raw.len() != PATCH_PIXELS {
        return Err(Error::shape(
            "normalize_patch",
            format!(
                "expected a {PATCH_SIDE}x{PATCH_SIDE} image, got {} pixels",
                raw.len()
            ),
        ));
    }
    let span = hi - lo;
    Ok(raw
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0) as f32)
        .collect())
}
