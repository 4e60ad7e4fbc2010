//! Lloyd's k-means with k-means++ seeding, nearest-centroid assignment and lookup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once the relative distortion improvement of an iteration drops below this.
    pub rel_tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-6,
        }
    }
}

/// A trained set of `k` centroids for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    pub centroids: Matrix<T>,
    pub stream_id: String,
    pub k: usize,
    pub seed: u64,
    /// Mean squared distance of the training frames to their centroid.
    pub final_distortion: f64,
    /// Lloyd steps plus single-point refinement passes.
    pub iterations_run: usize,
    /// Distortion after every assignment step, starting with the seeding.
    pub distortion_history: Vec<f64>,
    pub train_frames: usize,
}

impl<T: Scalar> Codebook<T> {
    /// Wraps fixed centroids, e.g. for tests or externally trained codebooks.
    pub fn from_centroids(centroids: Matrix<T>, stream_id: impl Into<String>) -> Self {
        Self {
            k: centroids.rows(),
            centroids,
            stream_id: stream_id.into(),
            seed: 0,
            final_distortion: 0.0,
            iterations_run: 0,
            distortion_history: Vec::new(),
            train_frames: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

/// Centroid indices for one stream of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<u32>,
    pub stream_id: String,
    pub k: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
#[inline]
pub fn nearest<T: Scalar>(centroids: &Matrix<T>, x: &[T]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = T::infinity();
    for k in 0..centroids.rows() {
        let c = centroids.row(k);
        let mut acc = T::zero();
        let mut pruned = false;
        for (chunk_x, chunk_c) in x.chunks(16).zip(c.chunks(16)) {
            for (a, b) in chunk_x.iter().zip(chunk_c) {
                let d = *a - *b;
                acc = acc + d * d;
            }
            // partial sums only grow, so a partial at or above the best cannot win
            if acc >= best_d {
                pruned = true;
                break;
            }
        }
        if !pruned && acc < best_d {
            best = k;
            best_d = acc;
        }
    }
    (best, best_d)
}

/// Assigns every row of `frames`, returning indices and the mean squared distance.
pub fn assign_rows<T: Scalar>(centroids: &Matrix<T>, frames: &Matrix<T>) -> (Vec<u32>, f64) {
    let mut total = 0.0;
    let indices = frames
        .iter_rows()
        .map(|x| {
            let (k, d) = nearest(centroids, x);
            total += d.as_f64();
            k as u32
        })
        .collect();
    let mean = if frames.rows() == 0 {
        0.0
    } else {
        total / frames.rows() as f64
    };
    (indices, mean)
}

fn check_input<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::config("k", "cluster count must be at least 1"));
    }
    if x.rows() < k {
        return Err(Error::Data(format!(
            "k-means needs at least k={k} points, got {}",
            x.rows()
        )));
    }
    if x.cols() == 0 {
        return Err(Error::Shape("k-means input has zero width".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    Ok(())
}

fn kmeans_pp_init<T: Scalar>(x: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = x
        .iter_rows()
        .map(|r| crate::scalar::sq_dist(r, x.row(first)).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // fewer distinct points than k: fall back to the first unused index
            taken.iter().position(|&t| !t).unwrap()
        };
        chosen.push(pick);
        taken[pick] = true;
        for (i, r) in x.iter_rows().enumerate() {
            let d = crate::scalar::sq_dist(r, x.row(pick)).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    x.select_rows(&chosen)
}

/// Recomputes centroids as cluster means; empty clusters move to the point farthest
/// from its current centroid.
fn update_centroids<T: Scalar>(x: &Matrix<T>, old: &Matrix<T>, assignment: &[u32]) -> Matrix<T> {
    let (k, d) = old.shape();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (row, &a) in x.iter_rows().zip(assignment) {
        let a = a as usize;
        counts[a] += 1;
        for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(row) {
            *s += v.as_f64();
        }
    }
    let mut next = Matrix::zeros(k, d);
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in next.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *dst = T::of(s * inv);
            }
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut far: Vec<(f64, usize)> = x
            .iter_rows()
            .zip(assignment)
            .enumerate()
            .map(|(i, (row, &a))| (crate::scalar::sq_dist(row, old.row(a as usize)).as_f64(), i))
            .collect();
        // farthest first, lowest index among equals
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (&c, &(_, i)) in empty.iter().zip(&far) {
            next.row_mut(c).copy_from_slice(x.row(i));
        }
    }
    next
}

/// One sweep of Hartigan's single-point moves over `assignment`: a point moves to the
/// cluster that lowers the total squared error the most, counting the change in both
/// means. Returns whether any point moved.
fn hartigan_pass<T: Scalar>(x: &Matrix<T>, assignment: &mut [u32], k: usize) -> bool {
    let d = x.cols();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0f64; k * d];
    for (row, &a) in x.iter_rows().zip(assignment.iter()) {
        let a = a as usize;
        counts[a] += 1;
        for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(row) {
            *s += v.as_f64();
        }
    }
    let mut means = vec![0.0f64; k * d];
    let refresh = |means: &mut [f64], sums: &[f64], counts: &[usize], c: usize| {
        let n = counts[c].max(1) as f64;
        for (m, s) in means[c * d..(c + 1) * d]
            .iter_mut()
            .zip(&sums[c * d..(c + 1) * d])
        {
            *m = s / n;
        }
    };
    for c in 0..k {
        refresh(&mut means, &sums, &counts, c);
    }
    let mut moved = false;
    let mut buf = vec![0.0f64; d];
    for (i, row) in x.iter_rows().enumerate() {
        let a = assignment[i] as usize;
        if counts[a] <= 1 {
            continue;
        }
        for (b, v) in buf.iter_mut().zip(row) {
            *b = v.as_f64();
        }
        let na = counts[a] as f64;
        let remove = na / (na - 1.0) * sq_dist(&buf, &means[a * d..(a + 1) * d]);
        let mut best = (a, remove);
        for b in 0..k {
            if b == a {
                continue;
            }
            if counts[b] == 0 {
                if 0.0 < best.1 {
                    best = (b, 0.0);
                }
                continue;
            }
            let nb = counts[b] as f64;
            let scale = nb / (nb + 1.0);
            // the partial distance only grows, so stop once it cannot win
            let limit = best.1 / scale;
            let mean = &means[b * d..(b + 1) * d];
            let mut acc = 0.0;
            let mut pruned = false;
            for (cx, cm) in buf.chunks(16).zip(mean.chunks(16)) {
                for (v, m) in cx.iter().zip(cm) {
                    let e = v - m;
                    acc += e * e;
                }
                if acc >= limit {
                    pruned = true;
                    break;
                }
            }
            if !pruned && scale * acc < best.1 {
                best = (b, scale * acc);
            }
        }
        let (b, add) = best;
        if b == a || add >= remove * (1.0 - 1e-12) {
            continue;
        }
        for (j, v) in row.iter().enumerate() {
            sums[a * d + j] -= v.as_f64();
            sums[b * d + j] += v.as_f64();
        }
        counts[a] -= 1;
        counts[b] += 1;
        refresh(&mut means, &sums, &counts, a);
        refresh(&mut means, &sums, &counts, b);
        assignment[i] = b as u32;
        moved = true;
    }
    moved
}

/// Trains a `k`-centroid codebook on the rows of `x`: Lloyd iterations, with a pass of
/// single-point moves whenever Lloyd stalls, until neither improves.
pub fn kmeans_fit<T: Scalar>(
    x: &Matrix<T>,
    k: usize,
    seed: u64,
    params: KMeansParams,
    stream_id: &str,
) -> Result<Codebook<T>> {
    check_input(x, k)?;
    if params.max_iters == 0 {
        return Err(Error::config("max_iters", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(x, k, &mut rng);
    let (mut assignment, mut distortion) = assign_rows(&centroids, x);
    let mut history = vec![distortion];
    let mut iterations = 0;
    while iterations < params.max_iters && distortion > 0.0 {
        let lloyd_converged = {
            let candidate = update_centroids(x, &centroids, &assignment);
            let (next_assignment, next_distortion) = assign_rows(&candidate, x);
            if next_distortion > distortion {
                // only reachable through rounding of the means; keep the better state
                true
            } else {
                iterations += 1;
                let improvement = (distortion - next_distortion) / distortion;
                centroids = candidate;
                assignment = next_assignment;
                distortion = next_distortion;
                history.push(distortion);
                improvement < params.rel_tol
            }
        };
        if !lloyd_converged || iterations >= params.max_iters || distortion == 0.0 {
            continue;
        }
        // Lloyd has stalled; single-point moves may still lower the distortion
        let mut refined = assignment.clone();
        let mut passes = 0;
        while iterations + passes < params.max_iters && hartigan_pass(x, &mut refined, k) {
            passes += 1;
        }
        if passes == 0 {
            break;
        }
        iterations += passes;
        let candidate = update_centroids(x, &centroids, &refined);
        let (next_assignment, next_distortion) = assign_rows(&candidate, x);
        if next_distortion >= distortion * (1.0 - params.rel_tol) {
            break;
        }
        centroids = candidate;
        assignment = next_assignment;
        distortion = next_distortion;
        history.push(distortion);
    }
    Ok(Codebook {
        centroids,
        stream_id: stream_id.to_string(),
        k,
        seed,
        final_distortion: distortion,
        iterations_run: iterations,
        distortion_history: history,
        train_frames: x.rows(),
    })
}

/// Nearest-centroid tokenization of one stream.
pub fn assign<T: Scalar>(cb: &Codebook<T>, h: &FeatureSequence<T>) -> Result<TokenSequence> {
    if h.dim() != cb.dim() {
        return Err(Error::Shape(format!(
            "stream {} has width {}, codebook {} expects {}",
            h.stream_id,
            h.dim(),
            cb.stream_id,
            cb.dim()
        )));
    }
    let (indices, _) = assign_rows(&cb.centroids, &h.frames);
    Ok(TokenSequence {
        indices,
        stream_id: h.stream_id.clone(),
        k: cb.k,
    })
}

/// Centroid lookup.
pub fn reconstruct<T: Scalar>(
    cb: &Codebook<T>,
    tokens: &TokenSequence,
) -> Result<FeatureSequence<T>> {
    if let Some(&bad) = tokens.indices.iter().find(|&&i| i as usize >= cb.k) {
        return Err(Error::Data(format!(
            "token {bad} out of range for codebook {} with k={}",
            cb.stream_id, cb.k
        )));
    }
    let idx: Vec<usize> = tokens.indices.iter().map(|&i| i as usize).collect();
    Ok(FeatureSequence {
        frames: cb.centroids.select_rows(&idx),
        stream_id: tokens.stream_id.clone(),
    })
}

/// `reconstruct(assign(h))` without the intermediate token allocation.
pub fn quantize_frames<T: Scalar>(cb: &Codebook<T>, frames: &Matrix<T>) -> Matrix<T> {
    let (idx, _) = assign_rows(&cb.centroids, frames);
    let idx: Vec<usize> = idx.into_iter().map(|i| i as usize).collect();
    cb.centroids.select_rows(&idx)
}
