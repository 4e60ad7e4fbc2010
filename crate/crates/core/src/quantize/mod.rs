//! Codebook training and application: per-stream k-means, residual VQ, elbow sizing
//! and the category-wise openSMILE quantizer.
//!
//! Codebooks are trained on the train split only and then frozen.

mod elbow;
mod kmeans;
mod opensmile;
mod rvq;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::dsqf;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use elbow::{elbow_k, knee_of_curve, ElbowResult};
pub use kmeans::{
    assign, assign_rows, kmeans_fit, nearest, quantize_frames, reconstruct, Codebook, KMeansParams,
    TokenSequence,
};
pub use opensmile::{
    fit_opensmile_codebooks, quantize_opensmile, Category, CategoryKMode, CategoryName,
    CategoryTable, QuantizedOpensmile,
};
pub use rvq::{rvq_decode, rvq_encode, rvq_fit, rvq_stage_reconstructions, RvqCodebook};

/// JSON sidecar stored next to a codebook's DSQF payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookMeta {
    pub stream_id: String,
    pub k: usize,
    pub seed: u64,
    pub final_distortion: f64,
    pub iterations_run: usize,
    pub train_frames: usize,
    pub distortion_history: Vec<f64>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<path>` (DSQF centroids) and `<path>.json` (metadata with extension swapped).
pub fn save_codebook<T: Scalar>(cb: &Codebook<T>, path: &Path) -> Result<()> {
    dsqf::write_matrix(&cb.centroids, path)?;
    let meta = CodebookMeta {
        stream_id: cb.stream_id.clone(),
        k: cb.k,
        seed: cb.seed,
        final_distortion: cb.final_distortion,
        iterations_run: cb.iterations_run,
        train_frames: cb.train_frames,
        distortion_history: cb.distortion_history.clone(),
    };
    let side = sidecar(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_codebook<T: Scalar>(path: &Path) -> Result<Codebook<T>> {
    let centroids = dsqf::read_matrix(path)?;
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CodebookMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: side.clone(),
        message: e.to_string(),
    })?;
    if meta.k != centroids.rows() {
        return Err(Error::Data(format!(
            "{}: sidecar says k={}, payload has {} rows",
            path.display(),
            meta.k,
            centroids.rows()
        )));
    }
    Ok(Codebook {
        centroids,
        stream_id: meta.stream_id,
        k: meta.k,
        seed: meta.seed,
        final_distortion: meta.final_distortion,
        iterations_run: meta.iterations_run,
        distortion_history: meta.distortion_history,
        train_frames: meta.train_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn codebook_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = Matrix::from_fn(40, 3, |r, c| ((r * 7 + c * 3) % 11) as f32);
        let cb = kmeans_fit(&x, 5, 1, KMeansParams::default(), "layer:3").unwrap();
        let path = dir.path().join("layer03_k5.dsqf");
        save_codebook(&cb, &path).unwrap();
        let back: Codebook<f32> = load_codebook(&path).unwrap();
        assert_eq!(back, cb);
    }
}
