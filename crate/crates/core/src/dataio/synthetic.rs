//! Seeded synthetic datasets with planted per-layer and paralinguistic class structure.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    layer_stream_id, write_dataset, Dataset, DatasetManifest, FeatureSequence, Split,
    UtteranceRecord, N_CLASSES, OPENSMILE_DIM,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantize::CategoryTable;

/// Largest allowed dot product between two class means.
const MAX_MEAN_DOT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    pub layer_count: usize,
    pub feature_dim: usize,
    /// Inclusive frame-count range per utterance.
    pub t_range: (usize, usize),
    /// Fraction of the unit-norm class mean injected into each layer.
    pub layer_informativeness: Vec<f64>,
    /// Scale of the class signal placed on the prosody block of the openSMILE stream.
    pub paralinguistic_gain: f64,
    pub noise_sigma: f64,
    /// Cosine between a layer's class mean and the class's shared direction.
    /// `1.0` gives every layer the same class means.
    #[serde(default = "default_correlation")]
    pub layer_mean_correlation: f64,
    pub seed: u64,
}

fn default_classes() -> usize {
    N_CLASSES
}

fn default_correlation() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// The dataset the acceptance suite runs on: 24 layers of width 64, class signal
    /// concentrated on layers 22-23 with a weaker bump on early layers, and a
    /// prosody-only class signal in the openSMILE stream.
    pub fn reference() -> Self {
        let mut informativeness = vec![0.0; 24];
        for (l, v) in informativeness.iter_mut().enumerate() {
            *v = match l {
                1..=3 => 0.35,
                22 | 23 => 1.0,
                _ => 0.0,
            };
        }
        Self {
            n_per_class: 150,
            n_classes: N_CLASSES,
            layer_count: 24,
            feature_dim: 64,
            t_range: (6, 10),
            layer_informativeness: informativeness,
            paralinguistic_gain: 1.0,
            noise_sigma: 1.0,
            layer_mean_correlation: 1.0,
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != N_CLASSES {
            return Err(Error::config(
                "n_classes",
                format!("must be {N_CLASSES}, got {}", self.n_classes),
            ));
        }
        if self.n_per_class == 0 {
            return Err(Error::config("n_per_class", "must be at least 1"));
        }
        if self.layer_count == 0 || self.feature_dim == 0 {
            return Err(Error::config(
                "layer_count",
                "layer_count and feature_dim must be positive",
            ));
        }
        let (lo, hi) = self.t_range;
        if lo == 0 || lo > hi {
            return Err(Error::config(
                "t_range",
                format!("invalid frame range ({lo}, {hi})"),
            ));
        }
        if self.layer_informativeness.len() != self.layer_count {
            return Err(Error::config(
                "layer_informativeness",
                format!(
                    "has {} entries for {} layers",
                    self.layer_informativeness.len(),
                    self.layer_count
                ),
            ));
        }
        if let Some(i) = self
            .layer_informativeness
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::config(
                format!("layer_informativeness[{i}]"),
                "must lie in [0, 1]",
            ));
        }
        if !(self.paralinguistic_gain >= 0.0 && self.paralinguistic_gain.is_finite()) {
            return Err(Error::config(
                "paralinguistic_gain",
                "must be finite and >= 0",
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.layer_mean_correlation) {
            return Err(Error::config(
                "layer_mean_correlation",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rejection-samples `count` unit vectors whose pairwise dot products are all at most
/// [`MAX_MEAN_DOT`]. `propose` draws one candidate.
fn separated_set(
    rng: &mut ChaCha8Rng,
    count: usize,
    mut propose: impl FnMut(&mut ChaCha8Rng, usize) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    const ATTEMPTS: usize = 20_000;
    for _restart in 0..64 {
        let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
        'next: while accepted.len() < count {
            for _ in 0..ATTEMPTS {
                let mut v = propose(rng, accepted.len());
                normalize(&mut v);
                if accepted.iter().all(|a| dot(a, &v) <= MAX_MEAN_DOT) {
                    accepted.push(v);
                    continue 'next;
                }
            }
            break;
        }
        if accepted.len() == count {
            return Ok(accepted);
        }
    }
    Err(Error::Data(format!(
        "could not draw {count} class means with pairwise dot <= {MAX_MEAN_DOT}"
    )))
}

/// Builds the dataset in memory. Pure function of `spec`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Dataset<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;

    let shared = separated_set(&mut rng, N_CLASSES, |r, _| gaussian_vec(r, d))?;
    let rho = spec.layer_mean_correlation;
    let mut layer_means = Vec::with_capacity(spec.layer_count);
    for _ in 0..spec.layer_count {
        if rho >= 1.0 {
            layer_means.push(shared.clone());
        } else {
            let means = separated_set(&mut rng, N_CLASSES, |r, c| {
                let mut own = gaussian_vec(r, d);
                normalize(&mut own);
                let s = (1.0 - rho * rho).sqrt();
                shared[c]
                    .iter()
                    .zip(&own)
                    .map(|(a, b)| rho * a + s * b)
                    .collect()
            })?;
            layer_means.push(means);
        }
    }
    let prosody = CategoryTable::standard().categories()[0];
    let prosody_means = separated_set(&mut rng, N_CLASSES, |r, _| gaussian_vec(r, prosody.dim))?;

    let (t_lo, t_hi) = spec.t_range;
    let sigma = spec.noise_sigma;
    let mut utterances = Vec::with_capacity(N_CLASSES * spec.n_per_class);
    for class in 0..N_CLASSES {
        for i in 0..spec.n_per_class {
            let t = rng.random_range(t_lo..=t_hi);
            let mut layers = Vec::with_capacity(spec.layer_count);
            for (l, &inf) in spec.layer_informativeness.iter().enumerate() {
                let mean = &layer_means[l][class];
                let frames = Matrix::from_fn(t, d, |_, c| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (inf * mean[c] + sigma * noise) as f32
                });
                layers.push(FeatureSequence {
                    frames,
                    stream_id: layer_stream_id(l),
                });
            }
            let t_os = t.div_ceil(2);
            let nu = &prosody_means[class];
            let os = Matrix::from_fn(t_os, OPENSMILE_DIM, |_, c| {
                let noise: f64 = rng.sample(StandardNormal);
                let signal = if c < prosody.dim {
                    spec.paralinguistic_gain * nu[c]
                } else {
                    0.0
                };
                (signal + sigma * noise) as f32
            });
            utterances.push(UtteranceRecord {
                utt_id: format!("c{class}_{i:05}"),
                split: Split::Train,
                layers,
                opensmile: Some(FeatureSequence {
                    frames: os,
                    stream_id: "opensmile".into(),
                }),
                label: class,
                frame_mask: vec![true; t],
            });
        }
    }

    assign_splits(&mut utterances, spec.n_per_class, &mut rng);
    Ok(Dataset {
        layer_count: spec.layer_count,
        feature_dim: d,
        utterances,
    })
}

/// Stratified 80/10/10 split. Utterances are stored class-major, `per_class` each.
fn assign_splits(utts: &mut [UtteranceRecord<f32>], per_class: usize, rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    let n_train = (per_class as f64 * 0.8).round() as usize;
    let n_dev = ((per_class as f64 * 0.1).round() as usize).min(per_class - n_train);
    for class_block in utts.chunks_mut(per_class) {
        let mut order: Vec<usize> = (0..class_block.len()).collect();
        order.shuffle(rng);
        for (rank, &i) in order.iter().enumerate() {
            class_block[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
        }
    }
}

/// Generates the dataset and writes it under `dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    let dataset = synthesize(spec)?;
    write_dataset(&dataset, dir)
}
