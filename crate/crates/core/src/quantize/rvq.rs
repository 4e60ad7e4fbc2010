//! Multi-stage residual vector quantization.

use crate::dataio::FeatureSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::kmeans::{assign_rows, kmeans_fit, Codebook, KMeansParams, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebook<T> {
    pub stages: Vec<Codebook<T>>,
    /// Mean squared residual norm on the training data after each stage.
    pub residual_energies: Vec<f64>,
}

impl<T: Scalar> RvqCodebook<T> {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }
}

fn subtract_lookup<T: Scalar>(residual: &mut Matrix<T>, centroids: &Matrix<T>, idx: &[u32]) {
    for (r, &i) in idx.iter().enumerate() {
        let c = centroids.row(i as usize);
        for (v, cv) in residual.row_mut(r).iter_mut().zip(c) {
            *v = *v - *cv;
        }
    }
}

/// Stage `s` is trained with seed `seed + s` on the residual left by stages `< s`.
pub fn rvq_fit<T: Scalar>(
    x: &Matrix<T>,
    n_stages: usize,
    k_per_stage: usize,
    seed: u64,
    params: KMeansParams,
    stream_id: &str,
) -> Result<RvqCodebook<T>> {
    if n_stages == 0 {
        return Err(Error::config("n_stages", "must be at least 1"));
    }
    let mut residual = x.clone();
    let mut stages = Vec::with_capacity(n_stages);
    let mut energies = Vec::with_capacity(n_stages);
    for s in 0..n_stages {
        let cb = kmeans_fit(
            &residual,
            k_per_stage,
            seed.wrapping_add(s as u64),
            params,
            &format!("{stream_id}/rvq{s}"),
        )?;
        let (idx, _) = assign_rows(&cb.centroids, &residual);
        subtract_lookup(&mut residual, &cb.centroids, &idx);
        let energy = residual
            .iter_rows()
            .map(|r| r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
            .sum::<f64>()
            / residual.rows() as f64;
        energies.push(energy);
        stages.push(cb);
    }
    Ok(RvqCodebook {
        stages,
        residual_energies: energies,
    })
}

/// Greedy stage-by-stage encoding; one token sequence per stage.
pub fn rvq_encode<T: Scalar>(
    rvq: &RvqCodebook<T>,
    h: &FeatureSequence<T>,
) -> Result<Vec<TokenSequence>> {
    if h.dim() != rvq.dim() {
        return Err(Error::Shape(format!(
            "stream {} has width {}, rvq expects {}",
            h.stream_id,
            h.dim(),
            rvq.dim()
        )));
    }
    let mut residual = h.frames.clone();
    let mut out = Vec::with_capacity(rvq.n_stages());
    for (s, cb) in rvq.stages.iter().enumerate() {
        let (idx, _) = assign_rows(&cb.centroids, &residual);
        subtract_lookup(&mut residual, &cb.centroids, &idx);
        out.push(TokenSequence {
            indices: idx,
            stream_id: format!("{}/rvq{s}", h.stream_id),
            k: cb.k,
        });
    }
    Ok(out)
}

/// Sum of the first `n_stages_used` stage lookups.
pub fn rvq_decode<T: Scalar>(
    rvq: &RvqCodebook<T>,
    tokens: &[TokenSequence],
    n_stages_used: usize,
) -> Result<FeatureSequence<T>> {
    let available = rvq.n_stages().min(tokens.len());
    if n_stages_used > available {
        return Err(Error::Data(format!(
            "requested {n_stages_used} stages, only {available} available"
        )));
    }
    let t = tokens.first().map_or(0, TokenSequence::len);
    let mut out = Matrix::zeros(t, rvq.dim());
    for (cb, seq) in rvq.stages.iter().zip(tokens).take(n_stages_used) {
        if seq.len() != t {
            return Err(Error::Shape(
                "stage token sequences differ in length".into(),
            ));
        }
        for (r, &i) in seq.indices.iter().enumerate() {
            if i as usize >= cb.k {
                return Err(Error::Data(format!(
                    "token {i} out of range for k={}",
                    cb.k
                )));
            }
            for (v, c) in out.row_mut(r).iter_mut().zip(cb.centroids.row(i as usize)) {
                *v = *v + *c;
            }
        }
    }
    let stream_id = tokens
        .first()
        .map(|s| {
            s.stream_id
                .split("/rvq")
                .next()
                .unwrap_or_default()
                .to_string()
        })
        .unwrap_or_default();
    Ok(FeatureSequence {
        frames: out,
        stream_id,
    })
}

/// Per-stage contributions (each stage's centroid lookup on its own), the streams fed
/// to layer attention in codec-style experiments.
pub fn rvq_stage_reconstructions<T: Scalar>(
    rvq: &RvqCodebook<T>,
    frames: &Matrix<T>,
) -> Vec<Matrix<T>> {
    let mut residual = frames.clone();
    let mut out = Vec::with_capacity(rvq.n_stages());
    for cb in &rvq.stages {
        let (idx, _) = assign_rows(&cb.centroids, &residual);
        subtract_lookup(&mut residual, &cb.centroids, &idx);
        let idx: Vec<usize> = idx.into_iter().map(|i| i as usize).collect();
        out.push(cb.centroids.select_rows(&idx));
    }
    out
}
