use disq::fusion::*;
use disq::model::{forward, Example, ModelShape, Params};
use disq::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn unit(d: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![1.0; d], vec![0.0; d])
}

fn close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape()
        && a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn attention_on_logits_two_one_zero() {
    let mut params = FusionParams::<f64>::new(3, 2, 0);
    params.attn_w = vec![1.0, 0.0];
    params.set_temperature(1.0);
    let summaries = Matrix::from_rows(&[vec![2.0, 9.0], vec![1.0, -4.0], vec![0.0, 0.5]]);
    let alpha = layer_attention(&summaries, &params).unwrap();

    let e: Vec<f64> = [2.0f64, 1.0, 0.0].iter().map(|z| z.exp()).collect();
    let z: f64 = e.iter().sum();
    for (a, ei) in alpha.iter().zip(&e) {
        assert!((a - ei / z).abs() < 1e-12);
    }
    for (a, want) in alpha.iter().zip([0.6652, 0.2447, 0.0900]) {
        assert!((a - want).abs() < 1e-4, "{alpha:?}");
    }
}

#[test]
fn large_temperature_is_nearly_uniform() {
    let mut params = FusionParams::<f64>::new(5, 4, 0);
    params.attn_w = vec![1.0, -1.0, 0.5, 2.0];
    params.set_temperature(1000.0);
    let summaries = gaussian(5, 4, 3);
    let alpha = layer_attention(&summaries, &params).unwrap();
    let max = alpha.iter().cloned().fold(f64::MIN, f64::max);
    assert!(max - 0.2 < 0.01);
}

#[test]
fn half_masked_pool_is_mean_of_kept_rows() {
    let h = gaussian(10, 6, 4);
    let mask: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
    let pooled = masked_average_pool(&h, &mask).unwrap();
    let kept: Vec<usize> = (0..10).step_by(2).collect();
    let sub = h.select_rows(&kept);
    for (c, p) in pooled.iter().enumerate() {
        let mean = (0..sub.rows()).map(|r| sub.get(r, c)).sum::<f64>() / sub.rows() as f64;
        assert!((p - mean).abs() < 1e-12);
    }
}

#[test]
fn fusion_matches_elementwise_sum() {
    let hs: Vec<Matrix<f64>> = (0..3).map(|s| gaussian(7, 5, 10 + s)).collect();
    let alpha = [0.2, 0.5, 0.3];
    let refs: Vec<&Matrix<f64>> = hs.iter().collect();
    let fused = fuse_layers(&refs, &alpha).unwrap();
    for t in 0..7 {
        for c in 0..5 {
            let want: f64 = (0..3).map(|l| alpha[l] * hs[l].get(t, c)).sum();
            assert!((fused.get(t, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_is_scale_invariant_on_random_frames() {
    // the variance floor leaks about |x̂|·eps/(2·var); frames with variance near 1 would
    // sit right at the tolerance
    let h = gaussian(20, 16, 5).scale(4.0);
    let (g, b) = unit(16);
    let a = layer_norm(&h, &g, &b, LAYER_NORM_EPS).unwrap();
    let s = layer_norm(&h.scale(5.0), &g, &b, LAYER_NORM_EPS).unwrap();
    let worst = a
        .as_slice()
        .iter()
        .zip(s.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn resample_examples() {
    let h = gaussian(6, 3, 6);
    assert_eq!(resample(&h, 6).unwrap(), h);

    let line = Matrix::from_rows(&[vec![0.0], vec![10.0]]);
    assert_eq!(resample(&line, 3).unwrap().as_slice(), &[0.0, 5.0, 10.0]);

    let ramp = Matrix::from_vec(10, 1, (0..10).map(f64::from).collect());
    let want: Vec<f64> = (0..4).map(|i| ((i * 10) / 4) as f64).collect();
    assert_eq!(want, vec![0.0, 2.0, 5.0, 7.0]);
    assert_eq!(resample(&ramp, 4).unwrap().as_slice(), &want[..]);
}

#[test]
fn matched_rate_modality_fusion() {
    let fused = gaussian(6, 4, 7);
    let osm = gaussian(6, 3, 8);
    let mut params = FusionParams::<f64>::new(1, 4, 3);
    params.gamma_fused = 1.7;
    let out = modality_fuse(&fused, &osm, &params).unwrap();
    let (g, b) = unit(4);
    let left = layer_norm(&fused, &g, &b, LAYER_NORM_EPS)
        .unwrap()
        .scale(1.7);
    assert!(close(&out.column_slice(0, 4), &left, 1e-12));
    let right = layer_norm(&osm, &[1.0; 3], &[0.0; 3], LAYER_NORM_EPS).unwrap();
    assert!(close(&out.column_slice(4, 3), &right, 1e-12));
}

fn scaled_layer_example(scale: f64, layer: usize, seed: u64) -> Example<f64> {
    let streams = (0..4)
        .map(|l| {
            let h = gaussian(9, 6, seed * 10 + l as u64);
            if l == layer {
                h.scale(scale)
            } else {
                h
            }
        })
        .collect();
    Example {
        streams,
        osm: Some(gaussian(5, 3, seed + 99)),
        mask: vec![true; 9],
        label: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_norm_standardizes(seed in any::<u64>(), t in 1usize..12, d in 2usize..24, scale in 1.0f64..50.0, shift in -100.0f64..100.0) {
        let mut h = gaussian(t, d, seed).scale(scale);
        h.as_mut_slice().iter_mut().for_each(|v| *v += shift);
        let (g, b) = unit(d);
        let out = layer_norm(&h, &g, &b, LAYER_NORM_EPS).unwrap();
        for r in 0..t {
            let row = h.row(r);
            let m = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
            prop_assume!(var > 0.5);
            let o = out.row(r);
            let om = o.iter().sum::<f64>() / d as f64;
            let ov = o.iter().map(|v| (v - om) * (v - om)).sum::<f64>() / d as f64;
            prop_assert!(om.abs() <= 1e-6);
            prop_assert!((ov - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn attention_is_a_simplex_and_shift_invariant(seed in any::<u64>(), n in 1usize..24, shift in -50.0f64..50.0, tau in 0.2f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = FusionParams::<f64>::new(n, 4, 0);
        params.attn_w = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        params.set_temperature(tau);
        let s = gaussian(n, 4, seed ^ 1);
        let a = layer_attention(&s, &params).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|&v| v > 0.0 && v < 1.0 || n == 1));
        params.attn_b += shift;
        let b = layer_attention(&s, &params).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        params.set_temperature(tau * 3.0);
        let c = layer_attention(&s, &params).unwrap();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        prop_assert_eq!(argmax(&a), argmax(&c));
    }

    #[test]
    fn fusion_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let xs: Vec<Matrix<f64>> = (0..3).map(|l| gaussian(5, 4, seed.wrapping_add(l))).collect();
        let ys: Vec<Matrix<f64>> = (0..3).map(|l| gaussian(5, 4, seed.wrapping_add(l + 10))).collect();
        let alpha = [0.1, 0.6, 0.3];
        let combo: Vec<Matrix<f64>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| Matrix::from_fn(5, 4, |r, c| a * x.get(r, c) + b * y.get(r, c)))
            .collect();
        let f = |m: &[Matrix<f64>]| fuse_layers(&m.iter().collect::<Vec<_>>(), &alpha).unwrap();
        let lhs = f(&combo);
        let (fx, fy) = (f(&xs), f(&ys));
        let rhs = Matrix::from_fn(5, 4, |r, c| a * fx.get(r, c) + b * fy.get(r, c));
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn resample_keeps_endpoints(seed in any::<u64>(), src in 1usize..20, tgt in 1usize..40) {
        let h = gaussian(src, 3, seed);
        let out = resample(&h, tgt).unwrap();
        prop_assert_eq!(out.rows(), tgt);
        prop_assert_eq!(out.row(0), h.row(0));
        if tgt > src && tgt > 1 {
            let last = out.row(tgt - 1);
            for (x, y) in last.iter().zip(h.row(src - 1)) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn scaling_one_input_layer_leaves_the_fused_output(seed in 0u64..1000, layer in 0usize..4, scale in 0.05f64..20.0) {
        let shape = ModelShape { n_streams: 4, dim: 6, osm_dim: 3, hidden: 5 };
        let mut params = Params::<f64>::init(&shape, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.fusion.attn_w = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let base = forward(&params, &scaled_layer_example(1.0, layer, seed)).unwrap();
        let scaled = forward(&params, &scaled_layer_example(scale, layer, seed)).unwrap();
        let (a, b) = (base.fused(), scaled.fused());
        let diff = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!(diff < 1e-4 * a.frobenius_norm());
    }
}
