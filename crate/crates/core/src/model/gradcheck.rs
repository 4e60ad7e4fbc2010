//! Central finite-difference check of the full backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::N_CLASSES;
use crate::error::Result;
use crate::matrix::Matrix;

use super::network::{batch_loss, batch_loss_and_grad, Example};
use super::params::{ModelShape, Params};

/// Step used by the central differences.
pub const GRADCHECK_EPSILON: f64 = 1e-3;

/// Magnitude below which gradients are compared absolutely rather than relatively.
/// Entries whose analytic and numeric values are both under this floor are dominated by
/// the O(ε²) truncation and rounding error of the difference quotient.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub max_rel_error: f64,
    /// Tensor and flat index of the worst entry.
    pub worst: (String, usize),
    pub scalars_checked: usize,
    pub tensors: Vec<TensorCheck>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A small random problem that exercises every code path: several streams, the
/// paralinguistic branch at a different frame rate, padding and unequal lengths.
pub fn random_problem(seed: u64) -> (Params<f64>, Vec<Example<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ModelShape {
        n_streams: 3,
        dim: 5,
        osm_dim: 4,
        hidden: 7,
    };
    let mut params = Params::<f64>::init(&shape, seed.wrapping_add(1));
    params.for_each_mut(|name, s| {
        for v in s.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += if name.contains("gain") || name.contains("gamma") {
                0.3 * z
            } else {
                0.5 * z
            };
        }
    });
    params.head.class_weights = (0..N_CLASSES).map(|_| rng.random_range(0.5..2.0)).collect();

    let mut example = |t: usize, valid: usize, t_os: usize, label: usize| {
        let streams = (0..shape.n_streams)
            .map(|_| Matrix::from_fn(t, shape.dim, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let osm = Matrix::from_fn(t_os, shape.osm_dim, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        Example {
            streams,
            osm: Some(osm),
            mask: (0..t).map(|i| i < valid).collect(),
            label,
        }
    };
    let examples = vec![example(6, 6, 3, 2), example(7, 5, 4, 5)];
    (params, examples)
}

/// Compares the analytic gradient of the batch loss against central differences for
/// every trainable scalar. The numeric derivative uses the fourth-order central stencil
/// at `±epsilon` and `±2·epsilon`.
pub fn check_gradients(
    params: &Params<f64>,
    examples: &[Example<f64>],
    epsilon: f64,
) -> Result<GradCheckReport> {
    let batch: Vec<usize> = (0..examples.len()).collect();
    let (_, grads) = batch_loss_and_grad(params, examples, &batch)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, _, s)| (n, s.to_vec()))
        .collect();

    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    let mut worst = (String::new(), 0);
    let mut max_rel = 0.0f64;
    let mut total = 0;
    for (t, (name, g)) in analytic.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        for (j, &a) in g.iter().enumerate() {
            let original = probe.tensors()[t].2[j];
            let mut at = |offset: f64| -> Result<f64> {
                set(&mut probe, t, j, original + offset);
                batch_loss(&probe, examples, &batch)
            };
            let (p1, m1, p2, m2) = (
                at(epsilon)?,
                at(-epsilon)?,
                at(2.0 * epsilon)?,
                at(-2.0 * epsilon)?,
            );
            set(&mut probe, t, j, original);
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon);
            let rel = relative_error(a, numeric, GRADCHECK_FLOOR);
            if rel > max_rel {
                max_rel = rel;
                worst = (name.clone(), j);
            }
            tensor_max = tensor_max.max(rel);
        }
        total += g.len();
        tensors.push(TensorCheck {
            name: name.clone(),
            max_rel_error: tensor_max,
            scalars: g.len(),
        });
    }
    Ok(GradCheckReport {
        seed: 0,
        epsilon,
        max_rel_error: max_rel,
        worst,
        scalars_checked: total,
        tensors,
    })
}

fn set(p: &mut Params<f64>, tensor: usize, index: usize, value: f64) {
    let mut views = p.tensors_mut();
    views[tensor].1[index] = value;
}

/// Runs [`check_gradients`] on [`random_problem`]`(seed)`.
pub fn gradient_check(seed: u64) -> Result<GradCheckReport> {
    let (params, examples) = random_problem(seed);
    let mut report = check_gradients(&params, &examples, GRADCHECK_EPSILON)?;
    report.seed = seed;
    Ok(report)
}
