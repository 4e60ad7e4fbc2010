//! Forward pass with cached intermediates and its exact reverse-mode gradient.
//!
//! Inputs are already quantized (or raw) per-stream frame sequences; nothing upstream
//! of them receives a gradient.

use crate::error::{Error, Result};
use crate::fusion::{
    fuse_layers, masked_average_pool, resample, standardize_frames, NormCache, LAYER_NORM_EPS,
};
use crate::matrix::Matrix;
use crate::scalar::{dot, sigmoid, softmax, Scalar};

use super::head::{attentive_stats_pool, mlp_forward, weighted_ce, PoolCache};
use super::params::Params;

/// One utterance as seen by the downstream model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    /// Selected streams, each `T x D`.
    pub streams: Vec<Matrix<T>>,
    /// Paralinguistic branch at its own frame rate, when used.
    pub osm: Option<Matrix<T>>,
    pub mask: Vec<bool>,
    pub label: usize,
}

impl<T: Scalar> Example<T> {
    pub fn frames(&self) -> usize {
        self.mask.len()
    }
}

#[derive(Debug, Clone)]
struct ModalityCache<T> {
    fused_norm: NormCache<T>,
    /// `fused_norm_gain ⊙ x̂ + bias`, before `gamma_fused`.
    fused_affine: Matrix<T>,
    osm_norm: NormCache<T>,
    osm_affine: Matrix<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layer_norm: Vec<NormCache<T>>,
    normed: Vec<Matrix<T>>,
    summaries: Matrix<T>,
    attn_logits: Vec<T>,
    pub alpha: Vec<T>,
    tau: T,
    fused: Matrix<T>,
    modality: Option<ModalityCache<T>>,
    features: Matrix<T>,
    pool: PoolCache<T>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Attention-weighted sum of the normalized streams.
    pub fn fused(&self) -> &Matrix<T> {
        &self.fused
    }

    /// Frames entering the pooling layer.
    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    /// Pooled `mean ‖ std` vector.
    pub fn pooled(&self) -> &[T] {
        &self.pooled
    }
}

fn check_finite<T: Scalar>(name: &str, values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
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

/// Runs the full downstream model on one example.
pub fn forward<T: Scalar>(params: &Params<T>, ex: &Example<T>) -> Result<ForwardCache<T>> {
    let f = &params.fusion;
    let n = ex.streams.len();
    if n != f.n_layers() {
        return Err(Error::Shape(format!(
            "example has {n} streams, model expects {}",
            f.n_layers()
        )));
    }
    if ex.osm.is_some() != (f.osm_dim() > 0) {
        return Err(Error::Shape(
            "paralinguistic branch presence differs between example and model".into(),
        ));
    }
    let t = ex.frames();
    let mut layer_norm = Vec::with_capacity(n);
    let mut normed = Vec::with_capacity(n);
    let mut summaries = Matrix::zeros(n, f.dim());
    for (l, h) in ex.streams.iter().enumerate() {
        if h.rows() != t || h.cols() != f.dim() {
            return Err(Error::Shape(format!(
                "stream {l} is {}x{}, expected {t}x{}",
                h.rows(),
                h.cols(),
                f.dim()
            )));
        }
        let cache = standardize_frames(h, LAYER_NORM_EPS)?;
        let y = affine(
            &cache.normalized,
            &f.layer_norm_gain[l],
            &f.layer_norm_bias[l],
        );
        let s = masked_average_pool(&y, &ex.mask)?;
        summaries.row_mut(l).copy_from_slice(&s);
        layer_norm.push(cache);
        normed.push(y);
    }
    check_finite("layer summaries", summaries.as_slice())?;

    let attn_logits: Vec<T> = summaries
        .iter_rows()
        .map(|s| dot(&f.attn_w, s) + f.attn_b)
        .collect();
    let tau = f.temperature();
    let alpha = softmax(&attn_logits.iter().map(|&z| z / tau).collect::<Vec<_>>());
    check_finite("layer attention", &alpha)?;

    let refs: Vec<&Matrix<T>> = normed.iter().collect();
    let fused = fuse_layers(&refs, &alpha)?;

    let (features, modality) = match &ex.osm {
        Some(osm) => {
            if osm.cols() != f.osm_dim() {
                return Err(Error::Shape(format!(
                    "paralinguistic branch has width {}, model expects {}",
                    osm.cols(),
                    f.osm_dim()
                )));
            }
            let aligned = resample(osm, t)?;
            let fused_norm = standardize_frames(&fused, LAYER_NORM_EPS)?;
            let fused_affine = affine(
                &fused_norm.normalized,
                &f.fused_norm_gain,
                &f.fused_norm_bias,
            );
            let osm_norm = standardize_frames(&aligned, LAYER_NORM_EPS)?;
            let osm_affine = affine(&osm_norm.normalized, &f.osm_norm_gain, &f.osm_norm_bias);
            let features = fused_affine
                .scale(f.gamma_fused)
                .hstack(&osm_affine.scale(f.gamma_osm));
            (
                features,
                Some(ModalityCache {
                    fused_norm,
                    fused_affine,
                    osm_norm,
                    osm_affine,
                }),
            )
        }
        None => (fused.clone(), None),
    };
    check_finite("fused features", features.as_slice())?;

    let h = &params.head;
    let (pooled, pool) = attentive_stats_pool(&features, &ex.mask, &h.pool_v, h.pool_b)?;
    check_finite("pooled statistics", &pooled)?;
    let (hidden, logits) = mlp_forward(&pooled, h)?;
    check_finite("logits", &logits)?;
    Ok(ForwardCache {
        layer_norm,
        normed,
        summaries,
        attn_logits,
        alpha,
        tau,
        fused,
        modality,
        features,
        pool,
        pooled,
        hidden,
        logits,
    })
}

/// Per-frame layer-norm backward: gradient w.r.t. the input frames given the gradient
/// w.r.t. the standardized frames.
fn standardize_backward<T: Scalar>(cache: &NormCache<T>, d_norm: &Matrix<T>) -> Matrix<T> {
    let (t, d) = d_norm.shape();
    let inv_d = T::one() / T::of_usize(d);
    let mut out = Matrix::zeros(t, d);
    for r in 0..t {
        let g = d_norm.row(r);
        let x = cache.normalized.row(r);
        let mean_g = g.iter().copied().sum::<T>() * inv_d;
        let mean_gx = dot(g, x) * inv_d;
        let is = cache.inv_std[r];
        for ((o, &gi), &xi) in out.row_mut(r).iter_mut().zip(g).zip(x) {
            *o = is * (gi - mean_g - xi * mean_gx);
        }
    }
    out
}

/// Accumulates `scale · dLoss/dparams` for one example into `grads`, where `d_logits`
/// is the loss gradient w.r.t. the logits (already scaled).
pub fn backward<T: Scalar>(
    params: &Params<T>,
    ex: &Example<T>,
    cache: &ForwardCache<T>,
    d_logits: &[T],
    grads: &mut Params<T>,
) -> Result<()> {
    let f = &params.fusion;
    let h = &params.head;
    let g = &mut grads.head;

    // classifier
    let hid = h.hidden();
    let input = h.w1.cols();
    for (k, &dz) in d_logits.iter().enumerate() {
        g.b2[k] = g.b2[k] + dz;
        for (w, &a) in g.w2.row_mut(k).iter_mut().zip(&cache.hidden) {
            *w = *w + dz * a;
        }
    }
    let mut d_pre = vec![T::zero(); hid];
    for (j, dp) in d_pre.iter_mut().enumerate() {
        let mut dh = T::zero();
        for (k, &dz) in d_logits.iter().enumerate() {
            dh = dh + h.w2.get(k, j) * dz;
        }
        let a = cache.hidden[j];
        *dp = dh * (T::one() - a * a);
    }
    let mut d_pooled = vec![T::zero(); input];
    for (j, &dp) in d_pre.iter().enumerate() {
        g.b1[j] = g.b1[j] + dp;
        if dp == T::zero() {
            continue;
        }
        for ((gw, &x), (dx, &w)) in
            g.w1.row_mut(j)
                .iter_mut()
                .zip(&cache.pooled)
                .zip(d_pooled.iter_mut().zip(h.w1.row(j)))
        {
            *gw = *gw + dp * x;
            *dx = *dx + w * dp;
        }
    }

    // attentive statistics pooling
    let width = cache.features.cols();
    let (d_mean_part, d_std) = d_pooled.split_at(width);
    let mut d_mean = d_mean_part.to_vec();
    let mut d_second = vec![T::zero(); width];
    for c in 0..width {
        if !cache.pool.clamped[c] {
            let dvar = d_std[c] / (T::of(2.0) * cache.pool.std[c]);
            d_second[c] = dvar;
            d_mean[c] = d_mean[c] - T::of(2.0) * cache.pool.mean[c] * dvar;
        }
    }
    let t = ex.frames();
    let mut d_features = Matrix::zeros(t, width);
    let mut d_weight = vec![T::zero(); t];
    for r in 0..t {
        let a = cache.pool.weights[r];
        if !ex.mask[r] {
            continue;
        }
        let x = cache.features.row(r);
        let mut da = T::zero();
        for c in 0..width {
            da = da + x[c] * d_mean[c] + x[c] * x[c] * d_second[c];
        }
        d_weight[r] = da;
        for (c, o) in d_features.row_mut(r).iter_mut().enumerate() {
            *o = a * (d_mean[c] + T::of(2.0) * x[c] * d_second[c]);
        }
    }
    let mean_da: T = (0..t).map(|r| cache.pool.weights[r] * d_weight[r]).sum();
    for r in 0..t {
        if !ex.mask[r] {
            continue;
        }
        let de = cache.pool.weights[r] * (d_weight[r] - mean_da);
        g.pool_b = g.pool_b + de;
        let x = cache.features.row(r);
        for (gv, &xv) in g.pool_v.iter_mut().zip(x) {
            *gv = *gv + de * xv;
        }
        for (o, &v) in d_features.row_mut(r).iter_mut().zip(&h.pool_v) {
            *o = *o + de * v;
        }
    }

    // modality fusion
    let gf = &mut grads.fusion;
    let dim = f.dim();
    let d_fused = match &cache.modality {
        Some(m) => {
            let mut d_fused_affine = Matrix::zeros(t, dim);
            let mut d_gamma_f = T::zero();
            let mut d_gamma_o = T::zero();
            let osm_dim = f.osm_dim();
            for r in 0..t {
                let row = d_features.row(r);
                let (left, right) = row.split_at(dim);
                for c in 0..dim {
                    let y = m.fused_affine.get(r, c);
                    d_gamma_f = d_gamma_f + left[c] * y;
                    let dy = f.gamma_fused * left[c];
                    d_fused_affine.set(r, c, dy * f.fused_norm_gain[c]);
                    gf.fused_norm_gain[c] =
                        gf.fused_norm_gain[c] + dy * m.fused_norm.normalized.get(r, c);
                    gf.fused_norm_bias[c] = gf.fused_norm_bias[c] + dy;
                }
                for c in 0..osm_dim {
                    let y = m.osm_affine.get(r, c);
                    d_gamma_o = d_gamma_o + right[c] * y;
                    let dy = f.gamma_osm * right[c];
                    gf.osm_norm_gain[c] =
                        gf.osm_norm_gain[c] + dy * m.osm_norm.normalized.get(r, c);
                    gf.osm_norm_bias[c] = gf.osm_norm_bias[c] + dy;
                }
            }
            gf.gamma_fused = gf.gamma_fused + d_gamma_f;
            gf.gamma_osm = gf.gamma_osm + d_gamma_o;
            standardize_backward(&m.fused_norm, &d_fused_affine)
        }
        None => d_features,
    };

    // layer attention and fusion
    let n = f.n_layers();
    let mut d_alpha = vec![T::zero(); n];
    for (l, y) in cache.normed.iter().enumerate() {
        d_alpha[l] = dot(d_fused.as_slice(), y.as_slice());
    }
    let mean_dalpha: T = cache.alpha.iter().zip(&d_alpha).map(|(&a, &d)| a * d).sum();
    let tau = cache.tau;
    let mut d_tau = T::zero();
    let n_valid = T::of_usize(ex.mask.iter().filter(|&&m| m).count());
    for l in 0..n {
        let du = cache.alpha[l] * (d_alpha[l] - mean_dalpha);
        let dz = du / tau;
        d_tau = d_tau - du * cache.attn_logits[l] / (tau * tau);
        gf.attn_b = gf.attn_b + dz;
        let s = cache.summaries.row(l);
        for (gw, &sv) in gf.attn_w.iter_mut().zip(s) {
            *gw = *gw + dz * sv;
        }
        // d(normed_l) = alpha_l * d_fused + [valid] * dz * w / n_valid
        let x_hat = &cache.layer_norm[l].normalized;
        let a = cache.alpha[l];
        for r in 0..t {
            let df = d_fused.row(r);
            let xr = x_hat.row(r);
            let valid = ex.mask[r];
            for c in 0..dim {
                let mut dy = a * df[c];
                if valid {
                    dy = dy + dz * f.attn_w[c] / n_valid;
                }
                gf.layer_norm_gain[l][c] = gf.layer_norm_gain[l][c] + dy * xr[c];
                gf.layer_norm_bias[l][c] = gf.layer_norm_bias[l][c] + dy;
            }
        }
    }
    gf.temperature_raw = gf.temperature_raw + d_tau * sigmoid(f.temperature_raw);
    Ok(())
}

/// Loss of one batch normalized by the summed class weights, plus gradients.
///
/// The batch is processed in ascending index order so that the result depends only on
/// which examples are in it, not on the order they were drawn in.
pub fn batch_loss_and_grad<T: Scalar>(
    params: &Params<T>,
    examples: &[Example<T>],
    batch: &[usize],
) -> Result<(T, Params<T>)> {
    let mut order = batch.to_vec();
    order.sort_unstable();
    let cw = &params.head.class_weights;
    let total_w: T = order.iter().map(|&i| cw[examples[i].label]).sum();
    let mut grads = params.zeros_like();
    if total_w <= T::zero() {
        return Ok((T::zero(), grads));
    }
    let mut loss = T::zero();
    for &i in &order {
        let ex = &examples[i];
        let cache = forward(params, ex)?;
        let (l, dz) = weighted_ce(&cache.logits, ex.label, cw)?;
        loss = loss + l;
        let scaled: Vec<T> = dz.into_iter().map(|d| d / total_w).collect();
        backward(params, ex, &cache, &scaled, &mut grads)?;
    }
    for (name, _, slice) in grads.tensors() {
        check_finite(&format!("gradient {name}"), slice)?;
    }
    Ok((loss / total_w, grads))
}

/// Loss only, same normalization as [`batch_loss_and_grad`].
pub fn batch_loss<T: Scalar>(
    params: &Params<T>,
    examples: &[Example<T>],
    batch: &[usize],
) -> Result<T> {
    let mut order = batch.to_vec();
    order.sort_unstable();
    let cw = &params.head.class_weights;
    let total_w: T = order.iter().map(|&i| cw[examples[i].label]).sum();
    if total_w <= T::zero() {
        return Ok(T::zero());
    }
    let mut loss = T::zero();
    for &i in &order {
        let cache = forward(params, &examples[i])?;
        let (l, _) = weighted_ce(&cache.logits, examples[i].label, cw)?;
        loss = loss + l;
    }
    Ok(loss / total_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelShape;
    use rand::{Rng, SeedableRng};

    fn random_example(
        rng: &mut rand_chacha::ChaCha8Rng,
        n: usize,
        t: usize,
        d: usize,
        osm: usize,
        label: usize,
    ) -> Example<f64> {
        Example {
            streams: (0..n)
                .map(|_| Matrix::from_fn(t, d, |_, _| rng.random_range(-2.0..2.0)))
                .collect(),
            osm: (osm > 0)
                .then(|| Matrix::from_fn(t.div_ceil(2), osm, |_, _| rng.random_range(-1.0..1.0))),
            mask: vec![true; t],
            label,
        }
    }

    #[test]
    fn zero_class_weights_zero_every_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let shape = ModelShape {
            n_streams: 2,
            dim: 4,
            osm_dim: 3,
            hidden: 5,
        };
        let mut p = Params::<f64>::init(&shape, 1);
        p.head.class_weights = vec![0.0; 8];
        let ex = vec![random_example(&mut rng, 2, 5, 4, 3, 1)];
        let (loss, g) = batch_loss_and_grad(&p, &ex, &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_osm_input_gives_zero_gamma_osm_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let shape = ModelShape {
            n_streams: 2,
            dim: 4,
            osm_dim: 3,
            hidden: 5,
        };
        let p = Params::<f64>::init(&shape, 2);
        let mut ex = random_example(&mut rng, 2, 6, 4, 3, 2);
        ex.osm = Some(Matrix::zeros(3, 3));
        let (_, g) = batch_loss_and_grad(&p, &[ex], &[0]).unwrap();
        assert_eq!(g.fusion.gamma_osm, 0.0);
        assert!(g.fusion.gamma_fused != 0.0);
    }

    #[test]
    fn padded_frames_contribute_nothing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let shape = ModelShape {
            n_streams: 3,
            dim: 4,
            osm_dim: 0,
            hidden: 6,
        };
        let mut p = Params::<f64>::init(&shape, 3);
        p.head.pool_v = vec![0.3, -0.2, 0.5, 0.1];
        p.fusion.attn_w = vec![0.4, 0.1, -0.3, 0.2];
        let ex = random_example(&mut rng, 3, 5, 4, 0, 4);
        let mut padded = ex.clone();
        for s in &mut padded.streams {
            let pad = Matrix::from_fn(3, 4, |_, _| rng.random_range(-50.0..50.0));
            *s = Matrix::vstack(&[s, &pad]);
        }
        padded.mask.extend([false; 3]);
        let (la, ga) = batch_loss_and_grad(&p, &[ex], &[0]).unwrap();
        let (lb, gb) = batch_loss_and_grad(&p, &[padded], &[0]).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for (a, b) in ga.flatten().iter().zip(gb.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_order_does_not_matter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let shape = ModelShape {
            n_streams: 2,
            dim: 3,
            osm_dim: 0,
            hidden: 4,
        };
        let p = Params::<f64>::init(&shape, 4);
        let ex: Vec<Example<f64>> = (0..4)
            .map(|i| random_example(&mut rng, 2, 4, 3, 0, i))
            .collect();
        let (la, ga) = batch_loss_and_grad(&p, &ex, &[3, 0, 2]).unwrap();
        let (lb, gb) = batch_loss_and_grad(&p, &ex, &[0, 2, 3]).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ga, gb);
    }
}
