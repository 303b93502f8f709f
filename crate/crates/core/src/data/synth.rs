//! Synthetic nodule-like patches.
//!
//! Benign patches hold a small, smooth, round blob. Malignant patches hold
//! a larger blob whose boundary is modulated by angular spikes and whose
//! interior carries a higher-frequency texture. Radius ranges overlap so
//! size alone does not separate the classes. Gaussian noise is added and
//! the result clipped to [0, 1].

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PatchDataset, PATCH_PIXELS, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub positive_fraction: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Benign blob radius range in pixels.
    pub benign_radius: (f64, f64),
    /// Malignant blob radius range in pixels.
    pub malignant_radius: (f64, f64),
    /// Relative amplitude range of the malignant boundary spikes.
    pub spiculation: (f64, f64),
    /// Relative amplitude of the malignant interior texture.
    pub texture: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            positive_fraction: 0.5,
            seed: 7,
            noise_sigma: 0.05,
            benign_radius: (3.0, 7.0),
            malignant_radius: (5.0, 10.0),
            spiculation: (0.15, 0.35),
            texture: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn positives(&self) -> usize {
        (self.n_samples as f64 * self.positive_fraction).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_samples == 0 {
            return fail("n_samples must be positive".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail(format!(
                "positive_fraction must lie in (0, 1), got {}",
                self.positive_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        let frame = PATCH_SIDE as f64 / 2.0;
        for (name, (lo, hi), limit) in [
            ("benign radius", self.benign_radius, frame - 2.0),
            ("malignant radius", self.malignant_radius, frame - 2.0),
        ] {
            if !(lo > 0.0 && lo <= hi && hi <= limit) {
                return fail(format!(
                    "{name} range [{lo}, {hi}] must satisfy 0 < lo <= hi <= {limit}"
                ));
            }
        }
        let (slo, shi) = self.spiculation;
        if !(0.0..1.0).contains(&slo) || !(slo..1.0).contains(&shi) {
            return fail(format!(
                "spiculation range [{slo}, {shi}] must lie in [0, 1)"
            ));
        }
        if self.malignant_radius.1 * (1.0 + shi) > frame {
            return fail("spiculated malignant blobs do not fit the 32x32 frame".into());
        }
        if !(0.0..1.0).contains(&self.texture) {
            return fail(format!("texture must lie in [0, 1), got {}", self.texture));
        }
        Ok(())
    }
}

/// Generates `config.n_samples` labelled patches, deterministically in
/// `config.seed`.
pub fn synth_generate(config: &SynthConfig) -> Result<PatchDataset> {
    config.validate()?;
    let positives = config.positives().clamp(1, config.n_samples - 1);
    let mut labels: Vec<u8> = (0..config.n_samples)
        .map(|i| u8::from(i < positives))
        .collect();
    let mut rng = Rng::derive(config.seed, "synth");
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut ds = PatchDataset::new();
    let mut patch = vec![0f32; PATCH_PIXELS];
    for (i, &label) in labels.iter().enumerate() {
        render(config, label == 1, &mut rng, &noise, &mut patch);
        ds.push(format!("syn-{i:06}"), &patch, label)?;
    }
    Ok(ds)
}

fn render(
    config: &SynthConfig,
    malignant: bool,
    rng: &mut Rng,
    noise: &Normal<f64>,
    out: &mut [f32],
) {
    let mid = (PATCH_SIDE as f64 - 1.0) / 2.0;
    let cx = mid + rng.random_range(-2.0..2.0);
    let cy = mid + rng.random_range(-2.0..2.0);
    let peak = rng.random_range(0.55..0.85);
    let background = rng.random_range(0.05..0.15);

    let (r_lo, r_hi) = if malignant {
        config.malignant_radius
    } else {
        config.benign_radius
    };
    let radius = rng.random_range(r_lo..=r_hi);

    let (spikes, spike_amp, phase, tex_freq, tex_phase) = if malignant {
        (
            rng.random_range(5..=9) as f64,
            rng.random_range(config.spiculation.0..=config.spiculation.1),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(1.2..2.0),
            rng.random_range(0.0..2.0 * PI),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0, 0.0)
    };

    for y in 0..PATCH_SIDE {
        for x in 0..PATCH_SIDE {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let d = (dx * dx + dy * dy).sqrt();
            let value = if malignant {
                let theta = dy.atan2(dx);
                let edge = radius * (1.0 + spike_amp * (spikes * theta + phase).cos());
                let texture = 1.0
                    + config.texture * (tex_freq * dx + tex_phase).sin() * (tex_freq * dy).sin();
                peak * (-(d / edge).powi(2)).exp() * texture
            } else {
                peak * (-(d / radius).powi(2)).exp()
            };
            let v = background + value + noise.sample(rng) * f64::from(config.noise_sigma > 0.0);
            out[y * PATCH_SIDE + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
}
