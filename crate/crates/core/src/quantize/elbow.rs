//! Codebook-size selection at the knee of the distortion curve.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::kmeans::{kmeans_fit, KMeansParams};

/// Relative slack under which two chord distances count as equal.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    pub chosen_k: usize,
    /// `(k, final distortion)` for every candidate, ascending in `k`.
    pub curve: Vec<(usize, f64)>,
}

/// Chord rule on a distortion curve: both axes are scaled to `[0, 1]`, and the interior
/// point farthest below the chord joining the first and last points wins. Equal
/// distances resolve to the smallest `k`.
pub fn knee_of_curve(curve: &[(usize, f64)]) -> Result<usize> {
    if curve.len() < 3 {
        return Err(Error::config(
            "candidate_ks",
            format!("need at least 3 candidates, got {}", curve.len()),
        ));
    }
    if curve.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::config("candidate_ks", "must be strictly ascending"));
    }
    let (k0, d0) = (curve[0].0 as f64, curve[0].1);
    let (k1, d1) = (curve[curve.len() - 1].0 as f64, curve[curve.len() - 1].1);
    let x_span = k1 - k0;
    let (d_min, d_max) = curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, d)| {
            (lo.min(d), hi.max(d))
        });
    let y_span = if d_max > d_min { d_max - d_min } else { 1.0 };
    let norm = |k: f64, d: f64| ((k - k0) / x_span, (d - d_min) / y_span);
    let (ax, ay) = norm(k0, d0);
    let (bx, by) = norm(k1, d1);
    let (dx, dy) = (bx - ax, by - ay);
    let len = (dx * dx + dy * dy).sqrt();

    let mut best = curve[1].0;
    let mut best_dist = f64::NEG_INFINITY;
    for &(k, d) in &curve[1..curve.len() - 1] {
        let (px, py) = norm(k as f64, d);
        // signed distance, positive below a descending chord
        let dist = (dx * (ay - py) - dy * (ax - px)) / len;
        if dist > best_dist + TIE_EPS {
            best = k;
            best_dist = dist;
        }
    }
    Ok(best)
}

/// Fits every candidate size and picks the knee.
pub fn elbow_k<T: Scalar>(
    x: &Matrix<T>,
    candidate_ks: &[usize],
    seed: u64,
    params: KMeansParams,
) -> Result<ElbowResult> {
    if candidate_ks.len() < 3 {
        return Err(Error::config(
            "candidate_ks",
            format!("need at least 3 candidates, got {}", candidate_ks.len()),
        ));
    }
    let mut curve = Vec::with_capacity(candidate_ks.len());
    for &k in candidate_ks {
        let cb = kmeans_fit(x, k, seed, params, "elbow")?;
        curve.push((k, cb.final_distortion));
    }
    let chosen_k = knee_of_curve(&curve)?;
    Ok(ElbowResult { chosen_k, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharp_knee() {
        let curve = [(16, 100.0), (32, 20.0), (64, 18.0), (128, 17.0)];
        assert_eq!(knee_of_curve(&curve).unwrap(), 32);
    }

    #[test]
    fn linear_curve_picks_smallest_interior() {
        let curve: Vec<(usize, f64)> = [8, 16, 24, 32, 40]
            .iter()
            .map(|&k| (k, 100.0 - 0.7 * k as f64))
            .collect();
        assert_eq!(knee_of_curve(&curve).unwrap(), 16);
    }

    #[test]
    fn too_few_candidates() {
        assert!(knee_of_curve(&[(1, 2.0), (2, 1.0)]).is_err());
    }
}
