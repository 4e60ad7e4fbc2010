//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use disq::dataio::{self, generate_synthetic, Dataset, Split, SyntheticSpec};
use disq::eval::{
    augmentation_report, evaluate, load_checkpoint, prepare_examples, render_csv, render_gains,
    render_text, result_row, run_sweep, save_checkpoint, train_pipeline, Augmentation, Cell,
    CodebookCache, LayerSelection, PipelineConfig, StreamSource, SweepGrid,
};
use disq::model::{gradient_check, TrainConfig};
use disq::quantize::{
    load_codebook, quantize_frames, quantize_opensmile, save_codebook, CategoryKMode,
    CategoryTable, Codebook, KMeansParams,
};
use disq::{Error, Result};

use crate::run::{load_config, Run};
use crate::{CodebooksArgs, EvalArgs, GenArgs, GradcheckArgs, SweepArgs, TokenizeArgs, TrainArgs};

fn load(manifest: &Path) -> Result<Dataset<f32>> {
    dataio::load_dataset::<f32>(manifest)
}

fn layer_file(layer: usize, k: usize) -> String {
    format!("layer_{layer:02}_k{k}.dsqf")
}

/// `index.json` of a codebook directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookIndex {
    pub k: usize,
    pub seed: u64,
    pub kmeans: KMeansParams,
    /// Digest of the train split the codebooks were fitted on.
    pub train_split: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub opensmile: Vec<CategoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub file: String,
    pub final_distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub category: String,
    pub k: usize,
    pub file: String,
}

pub const CODEBOOK_INDEX: &str = "index.json";

fn load_index(dir: &Path) -> Result<CodebookIndex> {
    load_config(&dir.join(CODEBOOK_INDEX))
}

/// Loads the layer codebooks of `dir` into `cache` after checking they were fitted on
/// this dataset's train split.
fn preload(
    cache: &CodebookCache,
    dataset: &Dataset<f32>,
    dir: &Path,
    k: Option<usize>,
) -> Result<CodebookIndex> {
    let index = load_index(dir)?;
    if index.train_split != dataset.split_digest(Split::Train) {
        return Err(Error::Data(format!(
            "codebooks in {} were trained on a different train split",
            dir.display()
        )));
    }
    if let Some(k) = k {
        if k != index.k {
            return Err(Error::config(
                "K",
                format!("requested K={k}, codebooks have K={}", index.k),
            ));
        }
    }
    for e in &index.layers {
        let cb: Codebook<f32> = load_codebook(&dir.join(&e.file))?;
        cache.insert_layer(dataset, e.layer, index.seed, cb);
    }
    Ok(index)
}

pub fn gen(args: &GenArgs, out: Option<&Path>) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(p) => load_config::<SyntheticSpec>(p)?,
        None => SyntheticSpec::reference(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_per_class {
        spec.n_per_class = n;
    }
    spec.validate()?;
    let mut run = Run::start("gen", out, &spec, vec![spec.seed])?;
    let manifest = generate_synthetic(&spec, &run.path("dataset"))?;
    run.record("dataset/manifest.json");
    run.write_json("spec.json", &spec)?;
    println!(
        "generated {} utterances ({} layers x {}) in {}",
        manifest.records.len(),
        manifest.layer_count,
        manifest.feature_dim,
        run.path("dataset").display()
    );
    run.finish()
}

fn resolve_layers(
    layers: &Option<Vec<usize>>,
    layer_set: &Option<String>,
    count: usize,
) -> Result<Vec<usize>> {
    let list = match (layers, layer_set) {
        (Some(l), _) => l.clone(),
        (None, Some(name)) => name.parse::<LayerSelection>()?.layers,
        (None, None) => (0..count).collect(),
    };
    if let Some(&bad) = list.iter().find(|&&l| l >= count) {
        return Err(Error::config(
            "layers",
            format!("layer {bad} out of range for {count} layers"),
        ));
    }
    Ok(list)
}

pub fn codebooks(args: &CodebooksArgs, out: Option<&Path>) -> Result<PathBuf> {
    let dataset = load(&args.manifest)?;
    let layers = resolve_layers(&args.layers, &args.layer_set, dataset.layer_count)?;
    let kmeans = KMeansParams {
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
    };
    let config = serde_json::json!({
        "manifest": args.manifest, "layers": layers, "k": args.k, "seed": args.seed,
        "kmeans": kmeans, "opensmile": args.opensmile,
    });
    let mut run = Run::start("codebooks", out, &config, vec![args.seed])?;
    let cache = CodebookCache::new();
    let mut index = CodebookIndex {
        k: args.k,
        seed: args.seed,
        kmeans,
        train_split: dataset.split_digest(Split::Train),
        layers: Vec::new(),
        opensmile: Vec::new(),
    };
    for &l in &layers {
        let cb = cache.layer_codebook(&dataset, l, args.k, args.seed, kmeans)?;
        let file = layer_file(l, args.k);
        save_codebook(&cb, &run.path(&file))?;
        run.record(&file);
        run.record(&file.replace(".dsqf", ".json"));
        index.layers.push(LayerEntry {
            layer: l,
            file,
            final_distortion: cb.final_distortion,
        });
    }
    if args.opensmile {
        let books =
            cache.opensmile_codebooks(&dataset, &CategoryKMode::Table, args.seed, kmeans)?;
        for (cat, cb) in books.table.categories().iter().zip(&books.codebooks) {
            let file = format!("osm_{}_k{}.dsqf", cat.name, cat.k);
            save_codebook(cb, &run.path(&file))?;
            run.record(&file);
            run.record(&file.replace(".dsqf", ".json"));
            index.opensmile.push(CategoryEntry {
                category: cat.name.to_string(),
                k: cat.k,
                file,
            });
        }
    }
    run.write_json(CODEBOOK_INDEX, &index)?;
    println!(
        "trained {} layer codebooks (K={}) and {} openSMILE codebooks in {}",
        index.layers.len(),
        args.k,
        index.opensmile.len(),
        run.dir.display()
    );
    run.finish()
}

#[derive(Serialize)]
struct TokenLine<'a> {
    utt_id: &'a str,
    split: Split,
    label: usize,
    streams: Vec<(String, Vec<u32>)>,
}

pub fn tokenize(args: &TokenizeArgs, out: Option<&Path>) -> Result<PathBuf> {
    let dataset = load(&args.manifest)?;
    let index = load_index(&args.codebooks)?;
    let config = serde_json::json!({
        "manifest": args.manifest, "codebooks": args.codebooks, "split": args.split.map(|s| s.to_string()),
    });
    let mut run = Run::start("tokenize", out, &config, vec![index.seed])?;
    let mut layer_books = Vec::new();
    for e in &index.layers {
        if e.layer >= dataset.layer_count {
            return Err(Error::Data(format!(
                "codebook for layer {} but dataset has {}",
                e.layer, dataset.layer_count
            )));
        }
        layer_books.push((
            e.layer,
            load_codebook::<f32>(&args.codebooks.join(&e.file))?,
        ));
    }
    let osm_books: Vec<Codebook<f32>> = index
        .opensmile
        .iter()
        .map(|e| load_codebook::<f32>(&args.codebooks.join(&e.file)))
        .collect::<Result<_>>()?;
    let table = if osm_books.is_empty() {
        None
    } else {
        Some(CategoryTable::standard().with_ks(&osm_books.iter().map(|c| c.k).collect::<Vec<_>>()))
    };

    let mut lines = String::new();
    for u in &dataset.utterances {
        if args.split.is_some_and(|s| s != u.split) {
            continue;
        }
        let utt_dir = run.path(&format!("recon/{}", u.utt_id));
        std::fs::create_dir_all(&utt_dir).map_err(|e| Error::io(&utt_dir, e))?;
        let mut streams = Vec::new();
        for (l, cb) in &layer_books {
            let (idx, _) = disq::quantize::assign_rows(&cb.centroids, &u.layers[*l].frames);
            streams.push((format!("layer:{l}"), idx));
            let recon = quantize_frames(cb, &u.layers[*l].frames);
            let rel = format!("recon/{}/layer_{l:02}.dsqf", u.utt_id);
            dataio::dsqf::write_matrix(&recon, &run.path(&rel))?;
            run.record(&rel);
        }
        if let (Some(table), Some(os)) = (&table, &u.opensmile) {
            let q = quantize_opensmile(os, table, &osm_books)?;
            for (cat, tok) in table.categories().iter().zip(q.tokens) {
                streams.push((format!("osm:{}", cat.name), tok.indices));
            }
            let rel = format!("recon/{}/opensmile.dsqf", u.utt_id);
            dataio::dsqf::write_matrix(&q.reconstruction.frames, &run.path(&rel))?;
            run.record(&rel);
        }
        let line = TokenLine {
            utt_id: &u.utt_id,
            split: u.split,
            label: u.label,
            streams,
        };
        lines.push_str(&serde_json::to_string(&line).expect("tokens serialize"));
        lines.push('\n');
    }
    run.write("tokens.jsonl", lines)?;
    println!("tokenized into {}", run.dir.display());
    run.finish()
}

fn default_layer_set() -> String {
    "all".into()
}

fn default_k() -> Option<usize> {
    Some(256)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqSection {
    pub layer: usize,
    pub stages: usize,
}

/// Schema of a training config file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    /// Named layer set or `custom:i,j,...`.
    #[serde(default = "default_layer_set")]
    pub layer_set: String,
    /// Codebook size; `null` bypasses quantization.
    #[serde(default = "default_k")]
    pub k: Option<usize>,
    #[serde(default)]
    pub rvq: Option<RvqSection>,
    #[serde(default = "default_aug")]
    pub aug: String,
    #[serde(default)]
    pub codebook_seed: u64,
    #[serde(default)]
    pub kmeans: KMeansParams,
    #[serde(default)]
    pub osm_k: CategoryKMode,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_aug() -> String {
    "none".into()
}

impl Default for TrainFile {
    fn default() -> Self {
        Self {
            layer_set: default_layer_set(),
            k: default_k(),
            rvq: None,
            aug: default_aug(),
            codebook_seed: 0,
            kmeans: KMeansParams::default(),
            osm_k: CategoryKMode::Table,
            train: TrainConfig::default(),
        }
    }
}

impl TrainFile {
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let streams = match &self.rvq {
            Some(r) => StreamSource::Rvq {
                layer: r.layer,
                stages: r.stages,
            },
            None => StreamSource::Layers(self.layer_set.parse()?),
        };
        Ok(PipelineConfig {
            streams,
            k: self.k,
            augmentation: self.aug.parse()?,
            codebook_seed: self.codebook_seed,
            kmeans: self.kmeans,
            osm_k: self.osm_k.clone(),
        })
    }
}

fn history_csv(history: &[disq::model::EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_macro_f1\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{}",
            h.epoch,
            h.train_loss,
            h.dev_macro_f1.map_or_else(String::new, |f| f.to_string())
        );
    }
    out
}

pub fn train(args: &TrainArgs, out: Option<&Path>) -> Result<PathBuf> {
    let mut file = match &args.config {
        Some(p) => load_config::<TrainFile>(p)?,
        None => TrainFile::default(),
    };
    if let Some(v) = &args.layer_set {
        file.layer_set = v.clone();
    }
    if let Some(v) = args.k {
        file.k = Some(v);
    }
    if args.continuous {
        file.k = None;
    }
    if let Some(v) = &args.aug {
        file.aug = v.clone();
    }
    if let Some(v) = args.codebook_seed {
        file.codebook_seed = v;
    }
    if let Some(v) = args.seed {
        file.train.seed = v;
    }
    if let Some(v) = args.epochs {
        file.train.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        file.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        file.train.batch_size = v;
    }
    if let Some(v) = args.hidden {
        file.train.hidden = v;
    }
    let pipeline = file.pipeline()?;
    file.train.validate()?;
    let dataset = load(&args.manifest)?;
    pipeline.validate(&dataset)?;
    let config = serde_json::json!({
        "manifest": args.manifest, "codebooks": args.codebooks, "config": file,
    });
    let mut run = Run::start(
        "train",
        out,
        &config,
        vec![file.train.seed, file.codebook_seed],
    )?;
    let cache = CodebookCache::new();
    if let Some(dir) = &args.codebooks {
        let index = preload(&cache, &dataset, dir, pipeline.k)?;
        if index.seed != pipeline.codebook_seed {
            return Err(Error::config(
                "codebook_seed",
                format!(
                    "codebooks were trained with seed {}, config says {}",
                    index.seed, pipeline.codebook_seed
                ),
            ));
        }
    }
    let (model, _) = train_pipeline(&dataset, &pipeline, &file.train, &cache)?;
    let meta = save_checkpoint(&model, &dataset, &run.path("checkpoint"))?;
    run.record("checkpoint/checkpoint.json");
    for t in &meta.tensors {
        run.record(&format!("checkpoint/{}", t.file));
    }
    run.write("history.csv", history_csv(&model.history))?;
    let best = &model.history[model.best_epoch];
    println!(
        "best epoch {} (dev macro F1 {}), checkpoint in {}",
        model.best_epoch,
        best.dev_macro_f1
            .map_or_else(|| "n/a".to_string(), |f| format!("{f:.4}")),
        run.path("checkpoint").display()
    );
    run.finish()
}

#[derive(Serialize)]
struct Metrics {
    split: Split,
    utterances: usize,
    macro_f1: f64,
    per_class_f1: Vec<f64>,
    accuracy: f64,
    confusion: Vec<Vec<u64>>,
    mean_alpha: Vec<f64>,
}

pub fn eval(args: &EvalArgs, out: Option<&Path>) -> Result<PathBuf> {
    let (meta, params) = load_checkpoint(&args.checkpoint)?;
    let dataset = load(&args.manifest)?;
    if meta.train_split != dataset.split_digest(Split::Train) {
        return Err(Error::Data(
            "the manifest's train split differs from the one the checkpoint was trained on".into(),
        ));
    }
    let config = serde_json::json!({
        "checkpoint": args.checkpoint, "manifest": args.manifest, "split": args.split.to_string(),
        "codebooks": args.codebooks,
    });
    let mut run = Run::start(
        "eval",
        out,
        &config,
        vec![meta.train.seed, meta.pipeline.codebook_seed],
    )?;
    let cache = CodebookCache::new();
    if let Some(dir) = &args.codebooks {
        preload(&cache, &dataset, dir, meta.pipeline.k)?;
    }
    let data = prepare_examples::<f64>(&dataset, &meta.pipeline, &cache)?;
    let examples = &data.split(args.split).examples;
    if examples.is_empty() {
        return Err(Error::Data(format!("the {} split is empty", args.split)));
    }
    let ev = evaluate(&params, examples)?;
    let cell = Cell {
        streams: meta.pipeline.streams.clone(),
        k: meta.pipeline.k,
        aug: meta.pipeline.augmentation,
    };
    let row = result_row(
        &cell,
        Some(meta.train.seed),
        ev.macro_f1,
        ev.per_class_f1,
        &ev.mean_alpha,
    );
    let metrics = Metrics {
        split: args.split,
        utterances: examples.len(),
        macro_f1: ev.macro_f1,
        per_class_f1: ev.per_class_f1.to_vec(),
        accuracy: ev.confusion.accuracy(),
        confusion: ev.confusion.counts.iter().map(|r| r.to_vec()).collect(),
        mean_alpha: ev.mean_alpha.clone(),
    };
    run.write_json("metrics.json", &metrics)?;
    run.write("metrics.csv", render_csv(std::slice::from_ref(&row)))?;
    println!(
        "{} macro F1 {:.4} over {} utterances",
        args.split,
        ev.macro_f1,
        examples.len()
    );
    run.finish()
}

pub fn sweep(args: &SweepArgs, workers: usize, out: Option<&Path>) -> Result<PathBuf> {
    let mut grid = match &args.grid {
        Some(p) => load_config::<SweepGrid>(p)?,
        None => SweepGrid::default(),
    };
    if let Some(s) = &args.seeds {
        grid.seeds = s.clone();
    }
    if let Some(e) = args.epochs {
        grid.train.epochs = e;
    }
    if let Some(s) = args.eval_split {
        grid.eval_split = s;
    }
    if let Some(ks) = &args.ks {
        grid.ks = ks.clone();
    }
    if let Some(sets) = &args.layer_sets {
        grid.layer_sets = sets
            .iter()
            .map(|s| s.parse::<LayerSelection>())
            .collect::<Result<_>>()?;
    }
    if let Some(augs) = &args.augmentations {
        grid.augmentations = augs
            .iter()
            .map(|s| s.parse::<Augmentation>())
            .collect::<Result<_>>()?;
    }
    grid.validate()?;
    let dataset = load(&args.manifest)?;
    for set in &grid.layer_sets {
        if let Some(&bad) = set.layers.iter().find(|&&l| l >= dataset.layer_count) {
            return Err(Error::config(
                "layer_sets",
                format!(
                    "`{}` uses layer {bad}, dataset has {} layers",
                    set.name, dataset.layer_count
                ),
            ));
        }
    }
    let config = serde_json::json!({ "manifest": args.manifest, "grid": grid });
    let mut run = Run::start("sweep", out, &config, grid.seeds.clone())?;
    let cache = CodebookCache::new();
    let report = run_sweep(&grid, &dataset, &cache, workers)?;
    if report.rows.is_empty() {
        let first = report
            .failures
            .first()
            .map_or("no cells ran".to_string(), |f| f.message.clone());
        return Err(match report.failures.first().map(|f| f.category.as_str()) {
            Some("config") => Error::config("grid", first),
            Some("numeric") => Error::Numeric(first),
            _ => Error::Data(first),
        });
    }
    run.write("results.csv", render_csv(&report.rows))?;
    run.write("results.txt", render_text(&report.rows, true))?;
    run.write_json("failures.json", &report.failures)?;
    if report.rows.iter().any(|r| r.aug != Augmentation::None) {
        match augmentation_report(&report.rows) {
            Ok(gains) => {
                run.write("gains.csv", render_gains(&gains))?;
            }
            Err(e) => eprintln!("warning: no augmentation report: {e}"),
        }
    }
    for f in &report.failures {
        eprintln!(
            "warning: cell {} seed {} failed [{}]: {}",
            f.cell, f.seed, f.category, f.message
        );
    }
    print!("{}", render_text(&report.rows, false));
    println!(
        "{} rows, {} failed runs, {} codebooks trained; results in {}",
        report.rows.len(),
        report.failures.len(),
        report.codebooks_trained,
        run.dir.display()
    );
    run.finish()
}

/// Maximum relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

pub fn gradcheck(args: &GradcheckArgs, out: Option<&Path>) -> Result<PathBuf> {
    let config = serde_json::json!({ "seeds": args.seed });
    let mut run = Run::start("gradcheck", out, &config, args.seed.clone())?;
    let mut reports = Vec::new();
    let mut worst = 0.0f64;
    for &seed in &args.seed {
        let r = gradient_check(seed)?;
        println!(
            "seed {seed}: max relative error {:.3e} over {} parameters (worst {}[{}])",
            r.max_rel_error, r.scalars_checked, r.worst.0, r.worst.1
        );
        worst = worst.max(r.max_rel_error);
        reports.push(r);
    }
    run.write_json("gradcheck.json", &reports)?;
    println!("max relative error {worst:.3e}");
    let dir = run.finish()?;
    if !(worst < GRADCHECK_TOLERANCE) {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(dir)
}
