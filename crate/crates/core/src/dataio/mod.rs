//! On-disk dataset contract and the synthetic dataset generator.
//!
//! A dataset directory holds one `manifest.json` plus one DSQF file per utterance
//! per stream. Layer files are mandatory; the openSMILE stream may be absent, in
//! which case only token-stream experiments can run on it.

pub mod dsqf;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use synthetic::{generate_synthetic, synthesize, SyntheticSpec};

/// Number of emotion classes.
pub const N_CLASSES: usize = 8;
/// Width of the openSMILE low-level descriptor vector.
pub const OPENSMILE_DIM: usize = 74;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One utterance's frames for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub frames: Matrix<T>,
    pub stream_id: String,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(frames: Matrix<T>, stream_id: impl Into<String>) -> Result<Self> {
        let seq = Self {
            frames,
            stream_id: stream_id.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, d) = self.frames.shape();
        if t == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "stream {} has empty shape {t}x{d}",
                self.stream_id
            )));
        }
        if !self.frames.is_finite() {
            return Err(Error::NonFinite(format!("stream {}", self.stream_id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            frames: self.frames.cast(),
            stream_id: self.stream_id.clone(),
        }
    }
}

/// Writes one stream as a DSQF file. Non-finite entries are rejected before anything
/// touches the disk.
pub fn write_feature_file<T: Scalar>(seq: &FeatureSequence<T>, path: &Path) -> Result<()> {
    seq.validate()?;
    dsqf::write_matrix(&seq.frames, path)
}

/// Reads a DSQF file; the stream id is taken from the file stem.
pub fn read_feature_file<T: Scalar>(path: &Path) -> Result<FeatureSequence<T>> {
    let frames = dsqf::read_matrix(path)?;
    let stream_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureSequence { frames, stream_id })
}

pub fn layer_stream_id(layer: usize) -> String {
    format!("layer:{layer}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::config(
                "split",
                format!("unknown split `{other}` (expected train, dev or test)"),
            )),
        }
    }
}

/// One utterance with every layer loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord<T> {
    pub utt_id: String,
    pub split: Split,
    /// Indexed by layer; all share one frame count and one width.
    pub layers: Vec<FeatureSequence<T>>,
    pub opensmile: Option<FeatureSequence<T>>,
    pub label: usize,
    pub frame_mask: Vec<bool>,
}

impl<T: Scalar> UtteranceRecord<T> {
    pub fn frames(&self) -> usize {
        self.frame_mask.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Data(format!("utterance {}: {msg}", self.utt_id));
        if self.label >= N_CLASSES {
            return Err(ctx(format!("label {} out of range", self.label)));
        }
        if !self.frame_mask.iter().any(|&m| m) {
            return Err(ctx("frame mask has no valid frame".into()));
        }
        let t = self.frame_mask.len();
        let d = self.layers.first().map(|l| l.dim());
        for layer in &self.layers {
            layer.validate()?;
            if layer.len() != t || Some(layer.dim()) != d {
                return Err(ctx(format!(
                    "stream {} is {}x{}, expected {t}x{}",
                    layer.stream_id,
                    layer.len(),
                    layer.dim(),
                    d.unwrap_or(0)
                )));
            }
        }
        if let Some(os) = &self.opensmile {
            os.validate()?;
            if os.dim() != OPENSMILE_DIM {
                return Err(ctx(format!(
                    "opensmile stream has width {}, expected {OPENSMILE_DIM}",
                    os.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> UtteranceRecord<U> {
        UtteranceRecord {
            utt_id: self.utt_id.clone(),
            split: self.split,
            layers: self.layers.iter().map(FeatureSequence::cast).collect(),
            opensmile: self.opensmile.as_ref().map(FeatureSequence::cast),
            label: self.label,
            frame_mask: self.frame_mask.clone(),
        }
    }
}

/// An in-memory dataset: every split of one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub layer_count: usize,
    pub feature_dim: usize,
    pub utterances: Vec<UtteranceRecord<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord<T>> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn has_opensmile(&self) -> bool {
        self.utterances.iter().all(|u| u.opensmile.is_some())
    }

    /// Per-class counts for one split.
    pub fn label_histogram(&self, split: Split) -> [usize; N_CLASSES] {
        let mut h = [0; N_CLASSES];
        for u in self.split(split) {
            h[u.label] += 1;
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            layer_count: self.layer_count,
            feature_dim: self.feature_dim,
            utterances: self.utterances.iter().map(UtteranceRecord::cast).collect(),
        }
    }

    /// Stable digest of the utterance ids and labels of one split, used to key
    /// codebook caches.
    pub fn split_digest(&self, split: Split) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for u in self.split(split) {
            h.update(u.utt_id.as_bytes());
            h.update([0, u.label as u8]);
            h.update((u.frames() as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub split: Split,
    pub label: usize,
    /// Layer file paths relative to the manifest directory, indexed by layer.
    pub layers: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opensmile: Option<PathBuf>,
    /// Absent means every frame is valid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub layer_count: usize,
    pub feature_dim: usize,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported manifest version {}", self.version),
            ));
        }
        if self.layer_count == 0 || self.feature_dim == 0 {
            return Err(Error::config(
                "layer_count",
                "layer_count and feature_dim must be positive",
            ));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.layers.len() != self.layer_count {
                return Err(Error::config(
                    format!("records[{i}].layers"),
                    format!(
                        "has {} entries, manifest declares {}",
                        r.layers.len(),
                        self.layer_count
                    ),
                ));
            }
            if r.label >= N_CLASSES {
                return Err(Error::config(
                    format!("records[{i}].label"),
                    format!("label {} outside 0..{N_CLASSES}", r.label),
                ));
            }
        }
        let mut train = [0usize; N_CLASSES];
        for r in self.records.iter().filter(|r| r.split == Split::Train) {
            train[r.label] += 1;
        }
        if let Some(class) = train.iter().position(|&n| n == 0) {
            return Err(Error::ClassAbsent {
                class,
                split: "train".into(),
            });
        }
        Ok(())
    }

    /// Loads every referenced feature file. `root` is the manifest's directory.
    pub fn load_dataset<T: Scalar>(&self, root: &Path) -> Result<Dataset<T>> {
        let mut utterances = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let mut layers = Vec::with_capacity(r.layers.len());
            for (l, rel) in r.layers.iter().enumerate() {
                let mut seq = read_feature_file::<T>(&root.join(rel))?;
                seq.stream_id = layer_stream_id(l);
                layers.push(seq);
            }
            let opensmile = match &r.opensmile {
                Some(rel) => {
                    let path = root.join(rel);
                    if path.exists() {
                        let mut seq = read_feature_file::<T>(&path)?;
                        seq.stream_id = "opensmile".into();
                        Some(seq)
                    } else {
                        None
                    }
                }
                None => None,
            };
            let t = layers.first().map_or(0, FeatureSequence::len);
            let frame_mask = r.frame_mask.clone().unwrap_or_else(|| vec![true; t]);
            let utt = UtteranceRecord {
                utt_id: r.utt_id.clone(),
                split: r.split,
                layers,
                opensmile,
                label: r.label,
                frame_mask,
            };
            utt.validate()?;
            if utt.layers.first().map(FeatureSequence::dim) != Some(self.feature_dim) {
                return Err(Error::Data(format!(
                    "utterance {} does not match feature_dim {}",
                    r.utt_id, self.feature_dim
                )));
            }
            utterances.push(utt);
        }
        Ok(Dataset {
            layer_count: self.layer_count,
            feature_dim: self.feature_dim,
            utterances,
        })
    }
}

/// Loads `manifest.json` (or the given manifest file) and all its feature files.
pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let (manifest_path, root) = if path.is_dir() {
        (path.join(MANIFEST_FILE), path.to_path_buf())
    } else {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), root)
    };
    DatasetManifest::load(&manifest_path)?.load_dataset(&root)
}

/// Writes `dataset` under `dir` as manifest plus per-stream DSQF files.
pub fn write_dataset<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<DatasetManifest> {
    let feats = dir.join("feats");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let mut records = Vec::with_capacity(dataset.utterances.len());
    for u in &dataset.utterances {
        let rel_dir = PathBuf::from("feats").join(&u.utt_id);
        let abs_dir = dir.join(&rel_dir);
        fs::create_dir_all(&abs_dir).map_err(|e| Error::io(&abs_dir, e))?;
        let mut layers = Vec::with_capacity(u.layers.len());
        for (l, seq) in u.layers.iter().enumerate() {
            let rel = rel_dir.join(format!("layer_{l:02}.dsqf"));
            write_feature_file(seq, &dir.join(&rel))?;
            layers.push(rel);
        }
        let opensmile = match &u.opensmile {
            Some(seq) => {
                let rel = rel_dir.join("opensmile.dsqf");
                write_feature_file(seq, &dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        let frame_mask = if u.frame_mask.iter().all(|&m| m) {
            None
        } else {
            Some(u.frame_mask.clone())
        };
        records.push(ManifestRecord {
            utt_id: u.utt_id.clone(),
            split: u.split,
            label: u.label,
            layers,
            opensmile,
            frame_mask,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        layer_count: dataset.layer_count,
        feature_dim: dataset.feature_dim,
        records,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Counts of each label per split, keyed by split name. Handy for reports.
pub fn split_histograms<T: Scalar>(dataset: &Dataset<T>) -> BTreeMap<Split, [usize; N_CLASSES]> {
    Split::ALL
        .iter()
        .map(|&s| (s, dataset.label_histogram(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_three_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsqf");
        let m = Matrix::from_rows(&[vec![1.5f32, -2.25, 3.0e-7], vec![4.0, 5.5e9, -0.0]]);
        let seq = FeatureSequence::new(m.clone(), "x").unwrap();
        write_feature_file(&seq, &path).unwrap();
        let back: FeatureSequence<f32> = read_feature_file(&path).unwrap();
        let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.frames), bits(&m));
        assert_eq!(back.stream_id, "x");
    }

    #[test]
    fn non_finite_is_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dsqf");
        let seq = FeatureSequence {
            frames: Matrix::from_rows(&[vec![1.0f32, f32::INFINITY]]),
            stream_id: "bad".into(),
        };
        assert!(matches!(
            write_feature_file(&seq, &path),
            Err(Error::NonFinite(_))
        ));
        assert!(!path.exists());
    }

    #[test]
    fn truncated_file_surfaces_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dsqf");
        let seq = FeatureSequence::new(Matrix::<f32>::zeros(4, 4), "t").unwrap();
        write_feature_file(&seq, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..40]).unwrap();
        let err = read_feature_file::<f32>(&path).unwrap_err();
        assert!(matches!(
            err,
            Error::Format {
                source: crate::error::FormatError::Truncated {
                    expected: 80,
                    actual: 40
                },
                ..
            }
        ));
    }

    #[test]
    fn manifest_without_train_class_is_rejected() {
        let manifest = DatasetManifest {
            version: 1,
            layer_count: 1,
            feature_dim: 2,
            records: vec![ManifestRecord {
                utt_id: "a".into(),
                split: Split::Train,
                label: 0,
                layers: vec!["a.dsqf".into()],
                opensmile: None,
                frame_mask: None,
            }],
        };
        assert!(matches!(
            manifest.validate(),
            Err(Error::ClassAbsent { class: 1, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn feature_files_round_trip_bitwise(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| {
                // finite f32 drawn from the raw bit space
                loop {
                    let v = f32::from_bits(rng.random::<u32>());
                    if v.is_finite() { break v; }
                }
            });
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.dsqf");
            write_feature_file(&FeatureSequence::new(m.clone(), "p").unwrap(), &path).unwrap();
            let back: FeatureSequence<f32> = read_feature_file(&path).unwrap();
            let a: Vec<u32> = m.as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.frames.as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
