//! Attentive statistics pooling, the MLP classifier and weighted cross-entropy.

use crate::dataio::N_CLASSES;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Scalar};

use super::params::HeadParams;

/// Variance floor inside the pooled standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PoolCache<T> {
    /// Frame weights, zero on masked frames.
    pub weights: Vec<T>,
    pub mean: Vec<T>,
    pub std: Vec<T>,
    /// True where the variance floor was active.
    pub clamped: Vec<bool>,
}

/// Weighted mean and standard deviation of the valid frames, with weights from a
/// softmax over per-frame scores `v · h_t + b`. Returns `mean ‖ std`.
pub fn attentive_stats_pool<T: Scalar>(
    h: &Matrix<T>,
    mask: &[bool],
    v: &[T],
    b: T,
) -> Result<(Vec<T>, PoolCache<T>)> {
    if mask.len() != h.rows() || v.len() != h.cols() {
        return Err(Error::Shape(format!(
            "pooling {}x{} frames with a {}-entry mask and {}-wide scorer",
            h.rows(),
            h.cols(),
            mask.len(),
            v.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Data(
            "attentive pooling over an all-masked sequence".into(),
        ));
    }
    let scores: Vec<f64> = h
        .iter_rows()
        .zip(mask)
        .map(|(row, &m)| {
            if m {
                (dot(v, row) + b).as_f64()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| if s.is_finite() { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let d = h.cols();
    let mut mean = vec![0.0f64; d];
    let mut second = vec![0.0f64; d];
    for (row, &a) in h.iter_rows().zip(&weights) {
        if a == 0.0 {
            continue;
        }
        for ((m, s), x) in mean.iter_mut().zip(second.iter_mut()).zip(row) {
            let x = x.as_f64();
            *m += a * x;
            *s += a * x * x;
        }
    }
    let mut clamped = Vec::with_capacity(d);
    let std: Vec<f64> = mean
        .iter()
        .zip(&second)
        .map(|(m, s)| {
            let var = s - m * m;
            clamped.push(var <= STD_FLOOR);
            var.max(STD_FLOOR).sqrt()
        })
        .collect();
    let out: Vec<T> = mean.iter().chain(&std).map(|&x| T::of(x)).collect();
    let cache = PoolCache {
        weights: weights.into_iter().map(T::of).collect(),
        mean: mean.into_iter().map(T::of).collect(),
        std: std.into_iter().map(T::of).collect(),
        clamped,
    };
    Ok((out, cache))
}

/// Returns `(tanh hidden activations, logits)`.
pub fn mlp_forward<T: Scalar>(x: &[T], head: &HeadParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    if x.len() != head.w1.cols() {
        return Err(Error::Shape(format!(
            "MLP input has {} entries, expected {}",
            x.len(),
            head.w1.cols()
        )));
    }
    let hidden: Vec<T> = head
        .w1
        .iter_rows()
        .zip(&head.b1)
        .map(|(w, &b)| (dot(w, x) + b).tanh())
        .collect();
    let logits = head
        .w2
        .iter_rows()
        .zip(&head.b2)
        .map(|(w, &b)| dot(w, &hidden) + b)
        .collect();
    Ok((hidden, logits))
}

/// `-w_y · log softmax(logits)_y` and its gradient `w_y · (softmax - onehot(y))`.
pub fn weighted_ce<T: Scalar>(
    logits: &[T],
    label: usize,
    class_weights: &[T],
) -> Result<(T, Vec<T>)> {
    if label >= N_CLASSES || logits.len() != N_CLASSES || class_weights.len() != N_CLASSES {
        return Err(Error::Shape(format!(
            "label {label} with {} logits and {} class weights",
            logits.len(),
            class_weights.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    let w = class_weights[label];
    let loss = w * (lse - logits[label]);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let p = (z - lse).exp();
            let target = if k == label { T::one() } else { T::zero() };
            w * (p - target)
        })
        .collect();
    Ok((loss, grad))
}
