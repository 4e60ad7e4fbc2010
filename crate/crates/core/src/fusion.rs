//! Attention-based multi-layer fusion and modality fusion with the openSMILE branch.
//!
//! Per utterance: every selected layer is layer-normed, summarized by a masked mean,
//! scored by a shared linear map, and the temperature-scaled softmax of those scores
//! weights the normalized layers into one fused sequence. When paralinguistic tokens
//! are used, their reconstruction is resampled to the layer frame rate and both
//! branches pass through their own normalizer and gain before concatenation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, softmax, softplus, Scalar};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Lower bound added to the softplus of the raw temperature.
pub const TEMPERATURE_FLOOR: f64 = 0.1;
/// Number of transformer layers the named sets index into.
pub const MAX_LAYERS: usize = 24;

/// The six named layer configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSet {
    All,
    AllButLast,
    LastOnly,
    Sparse,
    Last8,
    Ten,
}

impl LayerSet {
    pub const ALL: [LayerSet; 6] = [
        LayerSet::All,
        LayerSet::AllButLast,
        LayerSet::LastOnly,
        LayerSet::Sparse,
        LayerSet::Last8,
        LayerSet::Ten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerSet::All => "all",
            LayerSet::AllButLast => "all_but_last",
            LayerSet::LastOnly => "last_only",
            LayerSet::Sparse => "sparse",
            LayerSet::Last8 => "last8",
            LayerSet::Ten => "ten",
        }
    }

    pub fn layers(self) -> Vec<usize> {
        match self {
            LayerSet::All => (0..24).collect(),
            LayerSet::AllButLast => (0..23).collect(),
            LayerSet::LastOnly => vec![23],
            LayerSet::Sparse => vec![1, 3, 7, 12, 18, 23],
            LayerSet::Last8 => (16..24).collect(),
            LayerSet::Ten => vec![0, 1, 2, 4, 6, 9, 12, 16, 20, 23],
        }
    }

    /// Position in a sparse-to-dense ordering, used to sort reports.
    pub fn density_rank(self) -> usize {
        self.layers().len()
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "layer_set",
                    format!(
                        "unknown layer set `{s}` (expected one of all, all_but_last, \
                         last_only, sparse, last8, ten)"
                    ),
                )
            })
    }
}

/// Trainable parameters of the fusion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    /// One gain and bias vector per selected layer.
    pub layer_norm_gain: Vec<Vec<T>>,
    pub layer_norm_bias: Vec<Vec<T>>,
    pub attn_w: Vec<T>,
    pub attn_b: T,
    /// `tau = softplus(temperature_raw) + 0.1`.
    pub temperature_raw: T,
    pub gamma_fused: T,
    pub gamma_osm: T,
    pub fused_norm_gain: Vec<T>,
    pub fused_norm_bias: Vec<T>,
    /// Empty when there is no paralinguistic branch.
    pub osm_norm_gain: Vec<T>,
    pub osm_norm_bias: Vec<T>,
}

impl<T: Scalar> FusionParams<T> {
    /// Neutral start: unit gains, zero biases, zero scorer (uniform attention), `tau = 1`.
    pub fn new(n_layers: usize, dim: usize, osm_dim: usize) -> Self {
        // softplus(rho) = 0.9
        let rho = (0.9f64.exp() - 1.0).ln();
        Self {
            layer_norm_gain: vec![vec![T::one(); dim]; n_layers],
            layer_norm_bias: vec![vec![T::zero(); dim]; n_layers],
            attn_w: vec![T::zero(); dim],
            attn_b: T::zero(),
            temperature_raw: T::of(rho),
            gamma_fused: T::one(),
            gamma_osm: T::one(),
            fused_norm_gain: vec![T::one(); dim],
            fused_norm_bias: vec![T::zero(); dim],
            osm_norm_gain: vec![T::one(); osm_dim],
            osm_norm_bias: vec![T::zero(); osm_dim],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_norm_gain.len()
    }

    pub fn dim(&self) -> usize {
        self.attn_w.len()
    }

    pub fn osm_dim(&self) -> usize {
        self.osm_norm_gain.len()
    }

    pub fn temperature(&self) -> T {
        softplus(self.temperature_raw) + T::of(TEMPERATURE_FLOOR)
    }

    /// Sets the raw parameter so that `temperature()` returns `tau` (`tau > 0.1`).
    pub fn set_temperature(&mut self, tau: f64) {
        assert!(tau > TEMPERATURE_FLOOR, "temperature must exceed the floor");
        let s = tau - TEMPERATURE_FLOOR;
        // inverse softplus
        let raw = if s > 30.0 { s } else { s.exp_m1().ln() };
        self.temperature_raw = T::of(raw);
    }
}

/// Per-frame standardization state, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    /// Standardized frames before the affine map.
    pub normalized: Matrix<T>,
    /// `1 / sqrt(var + eps)` per frame.
    pub inv_std: Vec<T>,
}

/// Standardizes each frame over its features, returning the cache without the affine map.
pub fn standardize_frames<T: Scalar>(h: &Matrix<T>, eps: f64) -> Result<NormCache<T>> {
    let (t, d) = h.shape();
    if d == 0 {
        return Err(Error::Shape("layer norm over zero-length frames".into()));
    }
    let inv_d = 1.0 / d as f64;
    let mut normalized = Matrix::zeros(t, d);
    let mut inv_std = Vec::with_capacity(t);
    for r in 0..t {
        let row = h.row(r);
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() * inv_d;
        let var = row
            .iter()
            .map(|v| {
                let c = v.as_f64() - mean;
                c * c
            })
            .sum::<f64>()
            * inv_d;
        let is = 1.0 / (var + eps).sqrt();
        for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
            *o = T::of((v.as_f64() - mean) * is);
        }
        inv_std.push(T::of(is));
    }
    Ok(NormCache {
        normalized,
        inv_std,
    })
}

fn affine<T: Scalar>(x: &Matrix<T>, gain: &[T], bias: &[T]) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((o, g), b) in out.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *o = *o * *g + *b;
        }
    }
    out
}

/// Per-frame layer normalization with a learned affine map.
pub fn layer_norm<T: Scalar>(h: &Matrix<T>, gain: &[T], bias: &[T], eps: f64) -> Result<Matrix<T>> {
    if gain.len() != h.cols() || bias.len() != h.cols() {
        return Err(Error::Shape(format!(
            "layer norm parameters have length {}/{}, frames have width {}",
            gain.len(),
            bias.len(),
            h.cols()
        )));
    }
    let cache = standardize_frames(h, eps)?;
    Ok(affine(&cache.normalized, gain, bias))
}

/// Mean over the frames whose mask entry is true.
pub fn masked_average_pool<T: Scalar>(h: &Matrix<T>, mask: &[bool]) -> Result<Vec<T>> {
    if mask.len() != h.rows() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} frames",
            mask.len(),
            h.rows()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Data("mask selects no frame".into()));
    }
    let mut acc = vec![0.0f64; h.cols()];
    for (row, _) in h.iter_rows().zip(mask).filter(|(_, &m)| m) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.as_f64();
        }
    }
    Ok(acc.into_iter().map(|a| T::of(a / n as f64)).collect())
}

/// One attention logit per layer: `w · s_l + b`.
pub fn attention_logits<T: Scalar>(
    summaries: &Matrix<T>,
    params: &FusionParams<T>,
) -> Result<Vec<T>> {
    if summaries.rows() == 0 {
        return Err(Error::Data("layer attention over zero layers".into()));
    }
    if summaries.cols() != params.dim() {
        return Err(Error::Shape(format!(
            "summaries have width {}, scorer expects {}",
            summaries.cols(),
            params.dim()
        )));
    }
    if !summaries.is_finite() {
        return Err(Error::NonFinite("layer summaries".into()));
    }
    Ok(summaries
        .iter_rows()
        .map(|s| dot(&params.attn_w, s) + params.attn_b)
        .collect())
}

/// Temperature-scaled softmax over the per-layer logits.
pub fn layer_attention<T: Scalar>(
    summaries: &Matrix<T>,
    params: &FusionParams<T>,
) -> Result<Vec<T>> {
    let logits = attention_logits(summaries, params)?;
    let tau = params.temperature();
    let scaled: Vec<T> = logits.iter().map(|&z| z / tau).collect();
    Ok(softmax(&scaled))
}

/// `sum_l alpha_l * H_l`.
pub fn fuse_layers<T: Scalar>(layers: &[&Matrix<T>], alpha: &[T]) -> Result<Matrix<T>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Data("fusion over zero layers".into()))?;
    if alpha.len() != layers.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} layers",
            alpha.len(),
            layers.len()
        )));
    }
    let shape = first.shape();
    let mut out = Matrix::zeros(shape.0, shape.1);
    for (h, &a) in layers.iter().zip(alpha) {
        if h.shape() != shape {
            return Err(Error::Shape(format!(
                "layer shape {:?} differs from {:?}",
                h.shape(),
                shape
            )));
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *o = *o + a * *v;
        }
    }
    Ok(out)
}

/// Aligns a sequence to `t_tgt` frames: linear interpolation when upsampling, uniform
/// index selection when downsampling.
pub fn resample<T: Scalar>(h: &Matrix<T>, t_tgt: usize) -> Result<Matrix<T>> {
    let t_src = h.rows();
    if t_src == 0 || t_tgt == 0 {
        return Err(Error::Shape(format!(
            "cannot resample {t_src} frames to {t_tgt}"
        )));
    }
    let d = h.cols();
    let mut out = Matrix::zeros(t_tgt, d);
    if t_tgt > t_src {
        let step = (t_src - 1) as f64 / (t_tgt - 1) as f64;
        for i in 0..t_tgt {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(t_src - 1);
            let hi = (lo + 1).min(t_src - 1);
            let frac = T::of(pos - lo as f64);
            let (a, b) = (h.row(lo), h.row(hi));
            for (c, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = a[c] + frac * (b[c] - a[c]);
            }
        }
    } else {
        for i in 0..t_tgt {
            let src = i * t_src / t_tgt;
            out.row_mut(i).copy_from_slice(h.row(src));
        }
    }
    Ok(out)
}

/// Resamples the paralinguistic branch to the fused frame count, normalizes and scales
/// both branches, and concatenates them along the feature axis.
pub fn modality_fuse<T: Scalar>(
    fused: &Matrix<T>,
    osm: &Matrix<T>,
    params: &FusionParams<T>,
) -> Result<Matrix<T>> {
    if !fused.is_finite() || !osm.is_finite() {
        return Err(Error::NonFinite("modality fusion input".into()));
    }
    let aligned = resample(osm, fused.rows())?;
    let left = layer_norm(
        fused,
        &params.fused_norm_gain,
        &params.fused_norm_bias,
        LAYER_NORM_EPS,
    )?
    .scale(params.gamma_fused);
    let right = layer_norm(
        &aligned,
        &params.osm_norm_gain,
        &params.osm_norm_bias,
        LAYER_NORM_EPS,
    )?
    .scale(params.gamma_osm);
    Ok(left.hstack(&right))
}
