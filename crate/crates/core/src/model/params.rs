use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::N_CLASSES;
use crate::fusion::FusionParams;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Hidden width of the classifier MLP.
pub const DEFAULT_HIDDEN: usize = 256;

/// Shapes that determine a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Number of fused streams (selected layers or RVQ stages).
    pub n_streams: usize,
    /// Width of every stream.
    pub dim: usize,
    /// Width of the paralinguistic branch; 0 disables it.
    pub osm_dim: usize,
    pub hidden: usize,
}

impl ModelShape {
    /// Width of the frames entering the pooling layer.
    pub fn pooled_width(&self) -> usize {
        self.dim + self.osm_dim
    }
}

/// Pooling scorer, MLP and (frozen) class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub pool_v: Vec<T>,
    pub pool_b: T,
    /// `hidden x 2F`.
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// `8 x hidden`.
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    /// Not trained.
    pub class_weights: Vec<T>,
}

impl<T: Scalar> HeadParams<T> {
    /// Glorot-uniform MLP weights, zero biases and a zero pooling scorer.
    pub fn init(width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = 2 * width;
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + N_CLASSES) as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, input, |_, _| T::of(rng.random_range(-a1..a1)));
        let w2 = Matrix::from_fn(N_CLASSES, hidden, |_, _| T::of(rng.random_range(-a2..a2)));
        Self {
            pool_v: vec![T::zero(); width],
            pool_b: T::zero(),
            w1,
            b1: vec![T::zero(); hidden],
            w2,
            b2: vec![T::zero(); N_CLASSES],
            class_weights: vec![T::one(); N_CLASSES],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }
}

/// Every trainable tensor of the downstream model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub fusion: FusionParams<T>,
    pub head: HeadParams<T>,
}

impl<T: Scalar> Params<T> {
    pub fn init(shape: &ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            fusion: FusionParams::new(shape.n_streams, shape.dim, shape.osm_dim),
            head: HeadParams::init(shape.pooled_width(), shape.hidden, &mut rng),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            n_streams: self.fusion.n_layers(),
            dim: self.fusion.dim(),
            osm_dim: self.fusion.osm_dim(),
            hidden: self.head.hidden(),
        }
    }

    /// Same layout, all zeros (class weights included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, s| s.iter_mut().for_each(|v| *v = T::zero()));
        z.head.class_weights.iter_mut().for_each(|v| *v = T::zero());
        z
    }

    /// Named views of every trainable tensor in a fixed order, with `(rows, cols)`.
    pub fn tensors(&self) -> Vec<(String, (usize, usize), &[T])> {
        let f = &self.fusion;
        let h = &self.head;
        let mut out: Vec<(String, (usize, usize), &[T])> = Vec::new();
        for (i, g) in f.layer_norm_gain.iter().enumerate() {
            out.push((format!("fusion.ln_gain.{i:02}"), (1, g.len()), g));
        }
        for (i, b) in f.layer_norm_bias.iter().enumerate() {
            out.push((format!("fusion.ln_bias.{i:02}"), (1, b.len()), b));
        }
        out.push(("fusion.attn_w".into(), (1, f.attn_w.len()), &f.attn_w));
        out.push((
            "fusion.attn_b".into(),
            (1, 1),
            std::slice::from_ref(&f.attn_b),
        ));
        out.push((
            "fusion.temperature_raw".into(),
            (1, 1),
            std::slice::from_ref(&f.temperature_raw),
        ));
        if f.osm_dim() > 0 {
            out.push((
                "fusion.gamma_fused".into(),
                (1, 1),
                std::slice::from_ref(&f.gamma_fused),
            ));
            out.push((
                "fusion.gamma_osm".into(),
                (1, 1),
                std::slice::from_ref(&f.gamma_osm),
            ));
            out.push((
                "fusion.fused_norm_gain".into(),
                (1, f.dim()),
                &f.fused_norm_gain,
            ));
            out.push((
                "fusion.fused_norm_bias".into(),
                (1, f.dim()),
                &f.fused_norm_bias,
            ));
            out.push((
                "fusion.osm_norm_gain".into(),
                (1, f.osm_dim()),
                &f.osm_norm_gain,
            ));
            out.push((
                "fusion.osm_norm_bias".into(),
                (1, f.osm_dim()),
                &f.osm_norm_bias,
            ));
        }
        out.push(("head.pool_v".into(), (1, h.pool_v.len()), &h.pool_v));
        out.push((
            "head.pool_b".into(),
            (1, 1),
            std::slice::from_ref(&h.pool_b),
        ));
        out.push(("head.w1".into(), h.w1.shape(), h.w1.as_slice()));
        out.push(("head.b1".into(), (1, h.b1.len()), &h.b1));
        out.push(("head.w2".into(), h.w2.shape(), h.w2.as_slice()));
        out.push(("head.b2".into(), (1, h.b2.len()), &h.b2));
        out
    }

    /// Mutable counterpart of [`Params::tensors`], same order and names.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let osm = self.fusion.osm_dim() > 0;
        let f = &mut self.fusion;
        let h = &mut self.head;
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        for (i, g) in f.layer_norm_gain.iter_mut().enumerate() {
            out.push((format!("fusion.ln_gain.{i:02}"), g));
        }
        for (i, b) in f.layer_norm_bias.iter_mut().enumerate() {
            out.push((format!("fusion.ln_bias.{i:02}"), b));
        }
        out.push(("fusion.attn_w".into(), &mut f.attn_w));
        out.push(("fusion.attn_b".into(), std::slice::from_mut(&mut f.attn_b)));
        out.push((
            "fusion.temperature_raw".into(),
            std::slice::from_mut(&mut f.temperature_raw),
        ));
        if osm {
            out.push((
                "fusion.gamma_fused".into(),
                std::slice::from_mut(&mut f.gamma_fused),
            ));
            out.push((
                "fusion.gamma_osm".into(),
                std::slice::from_mut(&mut f.gamma_osm),
            ));
            out.push(("fusion.fused_norm_gain".into(), &mut f.fused_norm_gain));
            out.push(("fusion.fused_norm_bias".into(), &mut f.fused_norm_bias));
            out.push(("fusion.osm_norm_gain".into(), &mut f.osm_norm_gain));
            out.push(("fusion.osm_norm_bias".into(), &mut f.osm_norm_bias));
        }
        out.push(("head.pool_v".into(), &mut h.pool_v));
        out.push(("head.pool_b".into(), std::slice::from_mut(&mut h.pool_b)));
        out.push(("head.w1".into(), h.w1.as_mut_slice()));
        out.push(("head.b1".into(), &mut h.b1));
        out.push(("head.w2".into(), h.w2.as_mut_slice()));
        out.push(("head.b2".into(), &mut h.b2));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        for (name, slice) in self.tensors_mut() {
            f(&name, slice);
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, _, s)| s.len()).sum()
    }

    /// Flattened copy of all trainable scalars, in tensor order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, _, s)| s.iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        let f = &self.fusion;
        let h = &self.head;
        Params {
            fusion: FusionParams {
                layer_norm_gain: f.layer_norm_gain.iter().map(|g| c(g)).collect(),
                layer_norm_bias: f.layer_norm_bias.iter().map(|b| c(b)).collect(),
                attn_w: c(&f.attn_w),
                attn_b: U::of(f.attn_b.as_f64()),
                temperature_raw: U::of(f.temperature_raw.as_f64()),
                gamma_fused: U::of(f.gamma_fused.as_f64()),
                gamma_osm: U::of(f.gamma_osm.as_f64()),
                fused_norm_gain: c(&f.fused_norm_gain),
                fused_norm_bias: c(&f.fused_norm_bias),
                osm_norm_gain: c(&f.osm_norm_gain),
                osm_norm_bias: c(&f.osm_norm_bias),
            },
            head: HeadParams {
                pool_v: c(&h.pool_v),
                pool_b: U::of(h.pool_b.as_f64()),
                w1: h.w1.cast(),
                b1: c(&h.b1),
                w2: h.w2.cast(),
                b2: c(&h.b2),
                class_weights: c(&h.class_weights),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_views_agree() {
        let shape = ModelShape {
            n_streams: 3,
            dim: 4,
            osm_dim: 6,
            hidden: 5,
        };
        let mut p = Params::<f64>::init(&shape, 1);
        assert_eq!(p.shape(), shape);
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _, _)| n).collect();
        let lens: Vec<usize> = p
            .tensors()
            .iter()
            .map(|(_, (r, c), s)| {
                assert_eq!(r * c, s.len());
                s.len()
            })
            .collect();
        let names_mut: Vec<String> = p.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(p.n_scalars(), lens.iter().sum::<usize>());
        // 3*4*2 + 4 + 1 + 1 + 2 + 4*2 + 6*2 + 10 + 1 + 5*20 + 5 + 8*5 + 8
        assert_eq!(p.n_scalars(), 24 + 6 + 2 + 8 + 12 + 11 + 100 + 5 + 40 + 8);
    }

    #[test]
    fn no_osm_branch_omits_modality_tensors() {
        let shape = ModelShape {
            n_streams: 1,
            dim: 2,
            osm_dim: 0,
            hidden: 3,
        };
        let p = Params::<f64>::init(&shape, 0);
        assert!(p.tensors().iter().all(|(n, _, _)| !n.contains("gamma")));
    }
}
