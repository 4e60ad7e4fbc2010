//! Parameter tensors as one feature file each, indexed by a JSON entry list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::dsqf::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::params::{ModelShape, Params};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Relative to the checkpoint directory.
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

/// Writes every trainable tensor plus the class weights under `dir/tensors/`.
pub fn save_params<T: Scalar>(params: &Params<T>, dir: &Path) -> Result<Vec<TensorEntry>> {
    let tdir = dir.join("tensors");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let mut entries = Vec::new();
    let cw = &params.head.class_weights;
    let all = params.tensors().into_iter().chain(std::iter::once((
        "head.class_weights".to_string(),
        (1, cw.len()),
        &cw[..],
    )));
    for (name, (rows, cols), data) in all {
        let file = format!("tensors/{name}.dsqf");
        let m = Matrix::from_vec(rows, cols, data.to_vec());
        write_matrix(&m, &dir.join(&file))?;
        entries.push(TensorEntry {
            name,
            file,
            rows,
            cols,
        });
    }
    Ok(entries)
}

/// Rebuilds parameters of `shape` from the entries written by [`save_params`].
pub fn load_params<T: Scalar>(
    shape: &ModelShape,
    entries: &[TensorEntry],
    dir: &Path,
) -> Result<Params<T>> {
    let mut params = Params::<T>::init(shape, 0);
    let lookup = |name: &str| -> Result<Matrix<T>> {
        let e = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))?;
        let m: Matrix<T> = read_matrix(&dir.join(&e.file))?;
        if m.shape() != (e.rows, e.cols) {
            return Err(Error::Shape(format!(
                "tensor {name} is {:?}, index says {}x{}",
                m.shape(),
                e.rows,
                e.cols
            )));
        }
        Ok(m)
    };
    let mut loaded = Vec::new();
    for (name, _, data) in params.tensors() {
        let m = lookup(&name)?;
        if m.as_slice().len() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name} has {} values, model expects {}",
                m.as_slice().len(),
                data.len()
            )));
        }
        loaded.push(m.into_vec());
    }
    for ((_, slot), values) in params.tensors_mut().into_iter().zip(loaded) {
        slot.copy_from_slice(&values);
    }
    let cw = lookup("head.class_weights")?;
    if cw.as_slice().len() != params.head.class_weights.len() {
        return Err(Error::Shape(
            "class weight tensor has the wrong length".into(),
        ));
    }
    params.head.class_weights = cw.into_vec();
    Ok(params)
}
