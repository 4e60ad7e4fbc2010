//! From a loaded dataset to trained and evaluated models: stream selection, frozen
//! codebooks (cached), paralinguistic augmentation and checkpoints.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Split, UtteranceRecord, N_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::LayerSet;
use crate::matrix::Matrix;
use crate::model::{
    confusion, forward, load_params, save_params, train, EpochRecord, Example, ModelShape, Params,
    TensorEntry, TrainConfig,
};
use crate::quantize::{
    fit_opensmile_codebooks, kmeans_fit, quantize_frames, quantize_opensmile, rvq_fit,
    rvq_stage_reconstructions, CategoryKMode, CategoryName, CategoryTable, Codebook, KMeansParams,
    RvqCodebook,
};
use crate::scalar::Scalar;

use super::metrics::{macro_f1, ConfusionMatrix};

/// A named list of layer indices: one of the six named sets, or `custom:i,j,...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LayerSelection {
    pub name: String,
    pub layers: Vec<usize>,
}

impl LayerSelection {
    pub fn custom(layers: Vec<usize>) -> Self {
        let list: Vec<String> = layers.iter().map(usize::to_string).collect();
        Self {
            name: format!("custom:{}", list.join(",")),
            layers,
        }
    }
}

impl From<LayerSet> for LayerSelection {
    fn from(s: LayerSet) -> Self {
        Self {
            name: s.name().to_string(),
            layers: s.layers(),
        }
    }
}

impl FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(list) = s.strip_prefix("custom:") {
            let layers = list
                .split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|_| {
                        Error::config("layer_set", format!("bad layer index `{p}` in `{s}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if layers.is_empty() {
                return Err(Error::config("layer_set", "custom layer list is empty"));
            }
            return Ok(Self::custom(layers));
        }
        Ok(s.parse::<LayerSet>()?.into())
    }
}

impl TryFrom<String> for LayerSelection {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSelection> for String {
    fn from(s: LayerSelection) -> String {
        s.name
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Which paralinguistic features are concatenated to the fused frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Augmentation {
    None,
    Category(CategoryName),
    All,
}

impl Augmentation {
    pub fn name(&self) -> String {
        match self {
            Augmentation::None => "none".into(),
            Augmentation::Category(c) => c.as_str().into(),
            Augmentation::All => "all".into(),
        }
    }

    /// Width of the branch; `0` for no augmentation.
    pub fn width(&self, table: &CategoryTable) -> usize {
        match self {
            Augmentation::None => 0,
            Augmentation::Category(c) => table.get(*c).dim,
            Augmentation::All => table.total_dim(),
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "all" => Ok(Augmentation::All),
            other => other
                .parse::<CategoryName>()
                .map(Augmentation::Category)
                .map_err(|_| Error::config("aug", format!("unknown augmentation `{other}`"))),
        }
    }
}

impl TryFrom<String> for Augmentation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Augmentation> for String {
    fn from(a: Augmentation) -> String {
        a.name()
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Where the fused streams come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    /// One stream per selected layer.
    Layers(LayerSelection),
    /// One stream per residual stage of a single layer.
    Rvq { layer: usize, stages: usize },
}

impl StreamSource {
    pub fn name(&self) -> String {
        match self {
            StreamSource::Layers(sel) => sel.name.clone(),
            StreamSource::Rvq { layer, stages } => format!("rvq{stages}@{layer}"),
        }
    }

    pub fn n_streams(&self) -> usize {
        match self {
            StreamSource::Layers(sel) => sel.layers.len(),
            StreamSource::Rvq { stages, .. } => *stages,
        }
    }

    /// Layer index of each stream, for attention reports. RVQ stages map to `0..stages`.
    pub fn stream_columns(&self) -> Vec<usize> {
        match self {
            StreamSource::Layers(sel) => sel.layers.clone(),
            StreamSource::Rvq { stages, .. } => (0..*stages).collect(),
        }
    }
}

/// Everything upstream of the trainable model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub streams: StreamSource,
    /// Codebook size; `None` feeds the raw features (quantization bypassed).
    pub k: Option<usize>,
    pub augmentation: Augmentation,
    pub codebook_seed: u64,
    pub kmeans: KMeansParams,
    pub osm_k: CategoryKMode,
}

impl PipelineConfig {
    pub fn layers(selection: impl Into<LayerSelection>, k: Option<usize>) -> Self {
        Self {
            streams: StreamSource::Layers(selection.into()),
            k,
            augmentation: Augmentation::None,
            codebook_seed: 0,
            kmeans: KMeansParams::default(),
            osm_k: CategoryKMode::Table,
        }
    }

    pub fn validate(&self, dataset: &Dataset<f32>) -> Result<()> {
        match &self.streams {
            StreamSource::Layers(sel) => {
                if sel.layers.is_empty() {
                    return Err(Error::config("layer_set", "selects no layer"));
                }
                if let Some(&l) = sel.layers.iter().find(|&&l| l >= dataset.layer_count) {
                    return Err(Error::config(
                        "layer_set",
                        format!(
                            "`{}` uses layer {l}, dataset has {} layers",
                            sel.name, dataset.layer_count
                        ),
                    ));
                }
            }
            StreamSource::Rvq { layer, stages } => {
                if *layer >= dataset.layer_count {
                    return Err(Error::config(
                        "rvq.layer",
                        format!(
                            "layer {layer} out of range for {} layers",
                            dataset.layer_count
                        ),
                    ));
                }
                if *stages == 0 {
                    return Err(Error::config("rvq.stages", "must be at least 1"));
                }
                if self.k.is_none() {
                    return Err(Error::config(
                        "K",
                        "residual quantization needs a codebook size",
                    ));
                }
            }
        }
        if self.k == Some(0) {
            return Err(Error::config("K", "must be at least 1"));
        }
        if self.augmentation != Augmentation::None && !dataset.has_opensmile() {
            return Err(Error::config(
                "aug",
                format!(
                    "augmentation `{}` needs opensmile streams for every utterance",
                    self.augmentation
                ),
            ));
        }
        Ok(())
    }
}

type Slot<V> = Arc<Mutex<Option<Arc<V>>>>;
type SlotMap<K, V> = Mutex<HashMap<K, Slot<V>>>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct BookKey {
    stream: String,
    k: usize,
    seed: u64,
    split_hash: String,
}

/// Quantized openSMILE reconstruction of every utterance, plus the table used.
#[derive(Debug)]
pub struct OpensmileBooks {
    pub table: CategoryTable,
    pub codebooks: Vec<Codebook<f32>>,
}

/// Write-once store of trained codebooks and of the per-utterance streams derived from
/// them. Keys include the codebook seed and a digest of the train split, so entries are
/// never stale. Safe to share between sweep workers.
#[derive(Debug, Default)]
pub struct CodebookCache {
    layers: SlotMap<BookKey, Codebook<f32>>,
    rvq: SlotMap<BookKey, RvqCodebook<f32>>,
    osm: SlotMap<BookKey, OpensmileBooks>,
    streams: SlotMap<(BookKey, String), Vec<Matrix<f32>>>,
    trained: AtomicUsize,
}

fn slot<K: std::hash::Hash + Eq + Clone, V>(map: &SlotMap<K, V>, key: &K) -> Slot<V> {
    map.lock()
        .expect("cache lock")
        .entry(key.clone())
        .or_default()
        .clone()
}

fn get_or_build<V>(s: &Slot<V>, build: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
    let mut guard = s.lock().expect("cache slot lock");
    if let Some(v) = guard.as_ref() {
        return Ok(v.clone());
    }
    let v = Arc::new(build()?);
    *guard = Some(v.clone());
    Ok(v)
}

fn dataset_digest(dataset: &Dataset<f32>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for u in &dataset.utterances {
        h.update(u.utt_id.as_bytes());
        h.update([0, u.split as u8, u.label as u8]);
        h.update((u.frames() as u64).to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Valid frames of one layer over the train split, stacked.
fn train_frames(dataset: &Dataset<f32>, layer: usize) -> Matrix<f32> {
    let blocks: Vec<Matrix<f32>> = dataset
        .split(Split::Train)
        .map(|u| valid_rows(&u.layers[layer].frames, &u.frame_mask))
        .collect();
    let refs: Vec<&Matrix<f32>> = blocks.iter().collect();
    Matrix::vstack(&refs)
}

fn valid_rows(m: &Matrix<f32>, mask: &[bool]) -> Matrix<f32> {
    if mask.iter().all(|&v| v) {
        return m.clone();
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    m.select_rows(&idx)
}

impl CodebookCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of codebooks (or codebook sets) trained through this cache.
    pub fn trained(&self) -> usize {
        self.trained.load(Ordering::SeqCst)
    }

    fn layer_key(dataset: &Dataset<f32>, layer: usize, k: usize, seed: u64) -> BookKey {
        BookKey {
            stream: format!("layer:{layer}"),
            k,
            seed,
            split_hash: dataset.split_digest(Split::Train),
        }
    }

    /// Installs an externally trained codebook so that it is used instead of training.
    pub fn insert_layer(
        &self,
        dataset: &Dataset<f32>,
        layer: usize,
        seed: u64,
        codebook: Codebook<f32>,
    ) {
        let key = Self::layer_key(dataset, layer, codebook.k, seed);
        let s = slot(&self.layers, &key);
        *s.lock().expect("cache slot lock") = Some(Arc::new(codebook));
    }

    pub fn layer_codebook(
        &self,
        dataset: &Dataset<f32>,
        layer: usize,
        k: usize,
        seed: u64,
        params: KMeansParams,
    ) -> Result<Arc<Codebook<f32>>> {
        let key = Self::layer_key(dataset, layer, k, seed);
        get_or_build(&slot(&self.layers, &key), || {
            let x = train_frames(dataset, layer);
            let cb = kmeans_fit(&x, k, seed, params, &format!("layer:{layer}"))?;
            self.trained.fetch_add(1, Ordering::SeqCst);
            Ok(cb)
        })
    }

    pub fn rvq_codebook(
        &self,
        dataset: &Dataset<f32>,
        layer: usize,
        stages: usize,
        k: usize,
        seed: u64,
        params: KMeansParams,
    ) -> Result<Arc<RvqCodebook<f32>>> {
        let key = BookKey {
            stream: format!("rvq{stages}:layer:{layer}"),
            k,
            seed,
            split_hash: dataset.split_digest(Split::Train),
        };
        get_or_build(&slot(&self.rvq, &key), || {
            let x = train_frames(dataset, layer);
            let cb = rvq_fit(&x, stages, k, seed, params, &format!("layer:{layer}"))?;
            self.trained.fetch_add(1, Ordering::SeqCst);
            Ok(cb)
        })
    }

    pub fn opensmile_codebooks(
        &self,
        dataset: &Dataset<f32>,
        mode: &CategoryKMode,
        seed: u64,
        params: KMeansParams,
    ) -> Result<Arc<OpensmileBooks>> {
        let key = BookKey {
            stream: format!(
                "osm:{}",
                serde_json::to_string(mode).expect("mode serializes")
            ),
            k: 0,
            seed,
            split_hash: dataset.split_digest(Split::Train),
        };
        get_or_build(&slot(&self.osm, &key), || {
            let blocks: Vec<&Matrix<f32>> = dataset
                .split(Split::Train)
                .map(|u| {
                    u.opensmile.as_ref().map(|o| &o.frames).ok_or_else(|| {
                        Error::Data(format!("utterance {} has no opensmile stream", u.utt_id))
                    })
                })
                .collect::<Result<_>>()?;
            let x = Matrix::vstack(&blocks);
            let (table, codebooks) =
                fit_opensmile_codebooks(&x, &CategoryTable::standard(), mode, seed, params)?;
            self.trained.fetch_add(1, Ordering::SeqCst);
            Ok(OpensmileBooks { table, codebooks })
        })
    }

    /// Per-utterance streams (in dataset order) for one stream kind, memoized.
    fn streams(
        &self,
        dataset: &Dataset<f32>,
        key: BookKey,
        build: impl FnOnce() -> Result<Vec<Matrix<f32>>>,
    ) -> Result<Arc<Vec<Matrix<f32>>>> {
        get_or_build(&slot(&self.streams, &(key, dataset_digest(dataset))), build)
    }
}

/// Per-utterance inputs for one pipeline configuration, in dataset order.
struct Prepared {
    /// `[stream][utterance]`.
    streams: Vec<Arc<Vec<Matrix<f32>>>>,
    osm: Option<Arc<Vec<Matrix<f32>>>>,
}

fn prepare(
    dataset: &Dataset<f32>,
    config: &PipelineConfig,
    cache: &CodebookCache,
) -> Result<Prepared> {
    config.validate(dataset)?;
    let seed = config.codebook_seed;
    let mut streams = Vec::new();
    match (&config.streams, config.k) {
        (StreamSource::Layers(sel), None) => {
            for &l in &sel.layers {
                let key = BookKey {
                    stream: format!("raw:layer:{l}"),
                    k: 0,
                    seed: 0,
                    split_hash: String::new(),
                };
                streams.push(cache.streams(dataset, key, || {
                    Ok(dataset
                        .utterances
                        .iter()
                        .map(|u| u.layers[l].frames.clone())
                        .collect())
                })?);
            }
        }
        (StreamSource::Layers(sel), Some(k)) => {
            for &l in &sel.layers {
                let cb = cache.layer_codebook(dataset, l, k, seed, config.kmeans)?;
                let key = CodebookCache::layer_key(dataset, l, k, seed);
                streams.push(cache.streams(dataset, key, || {
                    Ok(dataset
                        .utterances
                        .iter()
                        .map(|u| quantize_frames(&cb, &u.layers[l].frames))
                        .collect())
                })?);
            }
        }
        (StreamSource::Rvq { layer, stages }, Some(k)) => {
            let rvq = cache.rvq_codebook(dataset, *layer, *stages, k, seed, config.kmeans)?;
            let per_utt: Vec<Vec<Matrix<f32>>> = dataset
                .utterances
                .iter()
                .map(|u| rvq_stage_reconstructions(&rvq, &u.layers[*layer].frames))
                .collect();
            for s in 0..*stages {
                streams.push(Arc::new(per_utt.iter().map(|v| v[s].clone()).collect()));
            }
        }
        (StreamSource::Rvq { .. }, None) => {
            return Err(Error::config(
                "K",
                "residual quantization needs a codebook size",
            ));
        }
    }
    let osm = if config.augmentation == Augmentation::None {
        None
    } else {
        let books = cache.opensmile_codebooks(dataset, &config.osm_k, seed, config.kmeans)?;
        let key = BookKey {
            stream: format!(
                "osm:{}",
                serde_json::to_string(&config.osm_k).expect("mode serializes")
            ),
            k: 0,
            seed,
            split_hash: dataset.split_digest(Split::Train),
        };
        let full = cache.streams(dataset, key, || {
            dataset
                .utterances
                .iter()
                .map(|u| {
                    let os = u.opensmile.as_ref().expect("validated above");
                    Ok(quantize_opensmile(os, &books.table, &books.codebooks)?
                        .reconstruction
                        .frames)
                })
                .collect()
        })?;
        Some(match config.augmentation {
            Augmentation::Category(c) => {
                let cat = books.table.get(c);
                Arc::new(
                    full.iter()
                        .map(|m| m.column_slice(cat.offset, cat.dim))
                        .collect(),
                )
            }
            _ => full,
        })
    };
    Ok(Prepared { streams, osm })
}

/// Model inputs for one split, in dataset order.
#[derive(Debug, Clone)]
pub struct PreparedSplit<T> {
    pub utt_ids: Vec<String>,
    pub examples: Vec<Example<T>>,
}

/// Model inputs for every split under one configuration.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    pub train: PreparedSplit<T>,
    pub dev: PreparedSplit<T>,
    pub test: PreparedSplit<T>,
    pub shape_dim: usize,
    pub osm_dim: usize,
}

impl<T> PreparedData<T> {
    pub fn split(&self, split: Split) -> &PreparedSplit<T> {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

pub fn prepare_examples<T: Scalar>(
    dataset: &Dataset<f32>,
    config: &PipelineConfig,
    cache: &CodebookCache,
) -> Result<PreparedData<T>> {
    let prepared = prepare(dataset, config, cache)?;
    let mut out = PreparedData {
        train: PreparedSplit {
            utt_ids: vec![],
            examples: vec![],
        },
        dev: PreparedSplit {
            utt_ids: vec![],
            examples: vec![],
        },
        test: PreparedSplit {
            utt_ids: vec![],
            examples: vec![],
        },
        shape_dim: dataset.feature_dim,
        osm_dim: prepared
            .osm
            .as_ref()
            .map_or(0, |o| o.first().map_or(0, |m| m.cols())),
    };
    for (i, u) in dataset.utterances.iter().enumerate() {
        let ex = example_for(u, i, &prepared);
        let target = match u.split {
            Split::Train => &mut out.train,
            Split::Dev => &mut out.dev,
            Split::Test => &mut out.test,
        };
        target.utt_ids.push(u.utt_id.clone());
        target.examples.push(ex);
    }
    Ok(out)
}

fn example_for<T: Scalar>(u: &UtteranceRecord<f32>, i: usize, p: &Prepared) -> Example<T> {
    Example {
        streams: p.streams.iter().map(|s| s[i].cast()).collect(),
        osm: p.osm.as_ref().map(|o| o[i].cast()),
        mask: u.frame_mask.clone(),
        label: u.label,
    }
}

/// Metrics of one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub per_class_f1: [f64; N_CLASSES],
    /// Mean attention weight per stream.
    pub mean_alpha: Vec<f64>,
}

/// Argmax predictions, Macro F1 and mean attention weights.
pub fn evaluate<T: Scalar>(params: &Params<T>, examples: &[Example<T>]) -> Result<Evaluation> {
    let shape = params.shape();
    for ex in examples {
        if ex.streams.len() != shape.n_streams
            || ex.streams.iter().any(|s| s.cols() != shape.dim)
            || ex.osm.as_ref().map_or(0, |o| o.cols()) != shape.osm_dim
        {
            return Err(Error::config(
                "checkpoint",
                "model parameters do not match the pipeline configuration",
            ));
        }
    }
    let cm = confusion(params, examples)?;
    let mut alpha = vec![0.0; shape.n_streams];
    for ex in examples {
        let cache = forward(params, ex)?;
        for (a, v) in alpha.iter_mut().zip(&cache.alpha) {
            *a += v.as_f64();
        }
    }
    let n = examples.len().max(1) as f64;
    alpha.iter_mut().for_each(|a| *a /= n);
    Ok(Evaluation {
        macro_f1: macro_f1(&cm)?,
        per_class_f1: cm.per_class_f1(),
        confusion: cm,
        mean_alpha: alpha,
    })
}

/// A trained model together with what produced it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub params: Params<f64>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Prepares inputs, trains in double precision and returns the best-dev model.
pub fn train_pipeline(
    dataset: &Dataset<f32>,
    pipeline: &PipelineConfig,
    train_config: &TrainConfig,
    cache: &CodebookCache,
) -> Result<(TrainedModel, PreparedData<f64>)> {
    train_config.validate()?;
    let data = prepare_examples::<f64>(dataset, pipeline, cache)?;
    let shape = ModelShape {
        n_streams: pipeline.streams.n_streams(),
        dim: data.shape_dim,
        osm_dim: data.osm_dim,
        hidden: train_config.hidden,
    };
    let outcome = train(
        &shape,
        &data.train.examples,
        &data.dev.examples,
        train_config,
    )?;
    Ok((
        TrainedModel {
            pipeline: pipeline.clone(),
            train: train_config.clone(),
            params: outcome.params,
            best_epoch: outcome.best_epoch,
            history: outcome.history,
        },
        data,
    ))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub shape: ModelShape,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Digest of the train split the codebooks and weights were fitted on.
    pub train_split: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `checkpoint.json` and one DSQF file per tensor (single precision).
pub fn save_checkpoint(
    model: &TrainedModel,
    dataset: &Dataset<f32>,
    dir: &Path,
) -> Result<CheckpointMeta> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = save_params(&model.params.cast::<f32>(), dir)?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        pipeline: model.pipeline.clone(),
        train: model.train.clone(),
        shape: model.params.shape(),
        best_epoch: model.best_epoch,
        history: model.history.clone(),
        train_split: dataset.split_digest(Split::Train),
        tensors,
    };
    let path = dir.join(CHECKPOINT_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("checkpoint serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointMeta, Params<f64>)> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::config(
            "version",
            format!("unsupported checkpoint version {}", meta.version),
        ));
    }
    let params = load_params::<f64>(&meta.shape, &meta.tensors, dir)?;
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_names_round_trip() {
        let s: LayerSelection = "sparse".parse().unwrap();
        assert_eq!(s.layers, vec![1, 3, 7, 12, 18, 23]);
        let c: LayerSelection = "custom:0,2,5".parse().unwrap();
        assert_eq!(c.layers, vec![0, 2, 5]);
        assert_eq!(c.name.parse::<LayerSelection>().unwrap(), c);
        assert!("custom:".parse::<LayerSelection>().is_err());
        assert!("dense".parse::<LayerSelection>().is_err());
    }

    #[test]
    fn augmentation_names_round_trip() {
        for s in ["none", "all", "prosody", "voice_quality"] {
            assert_eq!(s.parse::<Augmentation>().unwrap().name(), s);
        }
        assert!("pitch".parse::<Augmentation>().is_err());
        let t = CategoryTable::standard();
        assert_eq!(Augmentation::All.width(&t), 74);
        assert_eq!(Augmentation::Category(CategoryName::Mfcc).width(&t), 14);
    }
}
