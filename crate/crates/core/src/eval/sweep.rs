//! The experiment grid: layer sets × K × augmentations × seeds, with seed-averaged rows,
//! CSV/text rendering and augmentation-gain reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Split, N_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::{LayerSet, MAX_LAYERS};
use crate::model::TrainConfig;
use crate::quantize::{CategoryKMode, CategoryName, KMeansParams};

use super::pipeline::{
    evaluate, train_pipeline, Augmentation, CodebookCache, LayerSelection, PipelineConfig,
    StreamSource,
};

/// One evaluated (configuration, seed) pair, or the mean over seeds when `seed` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub layer_set: String,
    /// `None` for the unquantized baseline.
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub aug: Augmentation,
    pub macro_f1: f64,
    pub per_class_f1: [f64; N_CLASSES],
    /// Mean attention weight per layer column; `None` where the layer is not used.
    pub alpha: Vec<Option<f64>>,
    /// Number of fused streams, used to order reports from sparse to dense.
    pub n_streams: usize,
}

impl ResultRow {
    pub fn k_label(&self) -> String {
        self.k
            .map_or_else(|| "continuous".to_string(), |k| k.to_string())
    }

    pub fn seed_label(&self) -> String {
        self.seed
            .map_or_else(|| "mean".to_string(), |s| s.to_string())
    }

    /// Summed mean attention over the given layer columns.
    pub fn alpha_mass(&self, layers: &[usize]) -> f64 {
        layers
            .iter()
            .filter_map(|&l| self.alpha.get(l).copied().flatten())
            .sum()
    }
}

/// One configuration of the grid, run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub streams: StreamSource,
    pub k: Option<usize>,
    pub aug: Augmentation,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "{} K={} aug={}",
            self.streams.name(),
            self.k
                .map_or_else(|| "continuous".to_string(), |k| k.to_string()),
            self.aug
        )
    }
}

fn default_ks() -> Vec<usize> {
    vec![256, 512, 1000, 2000, 4000]
}

fn default_layer_sets() -> Vec<LayerSelection> {
    LayerSet::ALL.into_iter().map(Into::into).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_augs() -> Vec<Augmentation> {
    vec![Augmentation::None]
}

fn default_rvq_k() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_layer_sets")]
    pub layer_sets: Vec<LayerSelection>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_augs")]
    pub augmentations: Vec<Augmentation>,
    /// Adds the unquantized counterpart of every layer-set cell.
    #[serde(default)]
    pub continuous: bool,
    /// Stage counts of residual-quantizer cells (the codec analog).
    #[serde(default)]
    pub rvq_stages: Vec<usize>,
    #[serde(default = "default_rvq_k")]
    pub rvq_k: usize,
    /// Source layer of the residual quantizer; the last layer when absent.
    #[serde(default)]
    pub rvq_layer: Option<usize>,
    #[serde(default)]
    pub codebook_seed: u64,
    #[serde(default)]
    pub kmeans: KMeansParams,
    #[serde(default)]
    pub osm_k: CategoryKMode,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
}

fn default_eval_split() -> Split {
    Split::Test
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            ks: default_ks(),
            layer_sets: default_layer_sets(),
            seeds: default_seeds(),
            augmentations: default_augs(),
            continuous: false,
            rvq_stages: Vec::new(),
            rvq_k: default_rvq_k(),
            rvq_layer: None,
            codebook_seed: 0,
            kmeans: KMeansParams::default(),
            osm_k: CategoryKMode::Table,
            train: TrainConfig::default(),
            eval_split: Split::Test,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() && !self.continuous && self.rvq_stages.is_empty() {
            return Err(Error::config(
                "ks",
                "no codebook size, continuous or residual cell to run",
            ));
        }
        if self.ks.contains(&0) {
            return Err(Error::config("ks", "codebook sizes must be positive"));
        }
        if self.layer_sets.is_empty() && self.rvq_stages.is_empty() {
            return Err(Error::config("layer_sets", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.augmentations.is_empty() {
            return Err(Error::config("augmentations", "must not be empty"));
        }
        if self.rvq_stages.contains(&0) {
            return Err(Error::config("rvq_stages", "stage counts must be positive"));
        }
        if self.rvq_k == 0 {
            return Err(Error::config("rvq_k", "must be positive"));
        }
        self.train.validate()
    }

    /// Cells in report order: layer sets × (K then continuous) × augmentations, then
    /// residual-quantizer cells.
    pub fn cells(&self, layer_count: usize) -> Vec<Cell> {
        let mut ks: Vec<Option<usize>> = self.ks.iter().copied().map(Some).collect();
        if self.continuous {
            ks.push(None);
        }
        let mut cells = Vec::new();
        for ls in &self.layer_sets {
            for &k in &ks {
                for &aug in &self.augmentations {
                    cells.push(Cell {
                        streams: StreamSource::Layers(ls.clone()),
                        k,
                        aug,
                    });
                }
            }
        }
        let layer = self.rvq_layer.unwrap_or(layer_count.saturating_sub(1));
        for &stages in &self.rvq_stages {
            for &aug in &self.augmentations {
                cells.push(Cell {
                    streams: StreamSource::Rvq { layer, stages },
                    k: Some(self.rvq_k),
                    aug,
                });
            }
        }
        cells
    }

    pub fn pipeline(&self, cell: &Cell) -> PipelineConfig {
        PipelineConfig {
            streams: cell.streams.clone(),
            k: cell.k,
            augmentation: cell.aug,
            codebook_seed: self.codebook_seed,
            kmeans: self.kmeans,
            osm_k: self.osm_k.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub seed: u64,
    pub category: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Per cell: its seed rows, then its mean row.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    pub codebooks_trained: usize,
}

/// Trains and evaluates one cell for one seed.
pub fn run_cell(
    dataset: &Dataset<f32>,
    grid: &SweepGrid,
    cell: &Cell,
    seed: u64,
    cache: &CodebookCache,
) -> Result<ResultRow> {
    let pipeline = grid.pipeline(cell);
    let train = TrainConfig {
        seed,
        ..grid.train.clone()
    };
    let (model, data) = train_pipeline(dataset, &pipeline, &train, cache)?;
    let examples = &data.split(grid.eval_split).examples;
    if examples.is_empty() {
        return Err(Error::Data(format!("empty {} split", grid.eval_split)));
    }
    let ev = evaluate(&model.params, examples)?;
    Ok(result_row(
        cell,
        Some(seed),
        ev.macro_f1,
        ev.per_class_f1,
        &ev.mean_alpha,
    ))
}

pub fn result_row(
    cell: &Cell,
    seed: Option<u64>,
    macro_f1: f64,
    per_class_f1: [f64; N_CLASSES],
    stream_alpha: &[f64],
) -> ResultRow {
    let cols = cell.streams.stream_columns();
    let width = cols
        .iter()
        .map(|c| c + 1)
        .max()
        .unwrap_or(0)
        .max(MAX_LAYERS);
    let mut alpha = vec![None; width];
    for (&c, &a) in cols.iter().zip(stream_alpha) {
        alpha[c] = Some(a);
    }
    ResultRow {
        layer_set: cell.streams.name(),
        k: cell.k,
        seed,
        aug: cell.aug,
        macro_f1,
        per_class_f1,
        alpha,
        n_streams: cell.streams.n_streams(),
    }
}

/// Arithmetic mean of seed rows of one cell.
pub fn average_rows(rows: &[ResultRow]) -> Option<ResultRow> {
    let first = rows.first()?;
    let n = rows.len() as f64;
    let mut per_class = [0.0; N_CLASSES];
    for r in rows {
        for (p, v) in per_class.iter_mut().zip(&r.per_class_f1) {
            *p += v;
        }
    }
    per_class.iter_mut().for_each(|p| *p /= n);
    let alpha = (0..first.alpha.len())
        .map(|c| {
            first.alpha[c].map(|_| rows.iter().map(|r| r.alpha[c].unwrap_or(0.0)).sum::<f64>() / n)
        })
        .collect();
    Some(ResultRow {
        seed: None,
        macro_f1: rows.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        per_class_f1: per_class,
        alpha,
        ..first.clone()
    })
}

/// Runs every cell for every seed on at most `workers` threads. Failed (cell, seed)
/// pairs are recorded and the sweep continues. Output does not depend on `workers`.
pub fn run_sweep(
    grid: &SweepGrid,
    dataset: &Dataset<f32>,
    cache: &CodebookCache,
    workers: usize,
) -> Result<SweepReport> {
    grid.validate()?;
    let cells = grid.cells(dataset.layer_count);
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| grid.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let run = |&(c, s): &(usize, u64)| run_cell(dataset, grid, &cells[c], s, cache);
    let outcomes: Vec<Result<ResultRow>> = if workers <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut outcomes = outcomes.into_iter();
    for cell in &cells {
        let mut seed_rows = Vec::new();
        for &seed in &grid.seeds {
            match outcomes.next().expect("one outcome per job") {
                Ok(row) => seed_rows.push(row),
                Err(e) => failures.push(CellFailure {
                    cell: cell.label(),
                    seed,
                    category: e.category().as_str().to_string(),
                    message: e.to_string(),
                }),
            }
        }
        let mean = average_rows(&seed_rows);
        rows.extend(seed_rows);
        rows.extend(mean);
    }
    Ok(SweepReport {
        rows,
        failures,
        codebooks_trained: cache.trained(),
    })
}

pub fn csv_header() -> String {
    let mut cols: Vec<String> = ["layer_set", "K", "seed", "aug", "macro_f1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..N_CLASSES).map(|c| format!("f1_c{c}")));
    cols.extend((0..MAX_LAYERS).map(|l| format!("alpha_l{l}")));
    cols.join(",")
}

/// The machine-readable result table. Floats use the shortest exact representation.
pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in rows {
        let mut fields = vec![
            r.layer_set.clone(),
            r.k_label(),
            r.seed_label(),
            r.aug.name(),
            r.macro_f1.to_string(),
        ];
        fields.extend(r.per_class_f1.iter().map(f64::to_string));
        fields.extend((0..MAX_LAYERS).map(|l| {
            r.alpha
                .get(l)
                .copied()
                .flatten()
                .map_or_else(String::new, |a| a.to_string())
        }));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Aligned text table of the mean rows (seed rows too when `with_seeds`).
pub fn render_text(rows: &[ResultRow], with_seeds: bool) -> String {
    let header = [
        "layer_set",
        "K",
        "seed",
        "aug",
        "macro_f1",
        "top_layer",
        "top_alpha",
    ];
    let body: Vec<[String; 7]> = rows
        .iter()
        .filter(|r| with_seeds || r.seed.is_none())
        .map(|r| {
            let top = r
                .alpha
                .iter()
                .enumerate()
                .filter_map(|(l, a)| a.map(|a| (l, a)))
                .fold(None, |best: Option<(usize, f64)>, (l, a)| match best {
                    Some((_, b)) if b >= a => best,
                    _ => Some((l, a)),
                });
            [
                r.layer_set.clone(),
                r.k_label(),
                r.seed_label(),
                r.aug.name(),
                format!("{:.4}", r.macro_f1),
                top.map_or_else(|| "-".into(), |(l, _)| l.to_string()),
                top.map_or_else(|| "-".into(), |(_, a)| format!("{a:.3}")),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, f) in widths.iter_mut().zip(row) {
            *w = (*w).max(f.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, fields: &[&str]| {
        let cells: Vec<String> = fields
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, w))| {
                if i < 4 {
                    format!("{f:<w$}")
                } else {
                    format!("{f:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    };
    line(&mut out, &header);
    for row in &body {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub layer_set: String,
    pub k: Option<usize>,
    pub aug: Augmentation,
    pub base_f1: f64,
    pub aug_f1: f64,
    pub gain_percent: f64,
}

/// Percentage gain of each augmented mean row over its `none` baseline with the same
/// layer set and K, ordered from the sparsest layer set to the densest.
pub fn augmentation_report(rows: &[ResultRow]) -> Result<Vec<GainRow>> {
    let means: Vec<&ResultRow> = rows.iter().filter(|r| r.seed.is_none()).collect();
    let mut gains: Vec<(usize, GainRow)> = Vec::new();
    for r in means.iter().filter(|r| r.aug != Augmentation::None) {
        let base = means
            .iter()
            .find(|b| b.aug == Augmentation::None && b.layer_set == r.layer_set && b.k == r.k)
            .ok_or_else(|| {
                Error::Data(format!(
                    "no `none` baseline for layer set {} at K={}",
                    r.layer_set,
                    r.k_label()
                ))
            })?;
        gains.push((
            r.n_streams,
            GainRow {
                layer_set: r.layer_set.clone(),
                k: r.k,
                aug: r.aug,
                base_f1: base.macro_f1,
                aug_f1: r.macro_f1,
                gain_percent: gain_percent(base.macro_f1, r.macro_f1),
            },
        ));
    }
    gains.sort_by(|(na, a), (nb, b)| {
        na.cmp(nb)
            .then_with(|| a.layer_set.cmp(&b.layer_set))
            .then_with(|| a.k.cmp(&b.k))
            .then_with(|| a.aug.cmp(&b.aug))
    });
    Ok(gains.into_iter().map(|(_, g)| g).collect())
}

/// `100 · (aug − base) / base`.
pub fn gain_percent(base: f64, aug: f64) -> f64 {
    100.0 * (aug - base) / base
}

pub fn render_gains(gains: &[GainRow]) -> String {
    let mut out = String::from("layer_set,K,aug,base_f1,aug_f1,gain_percent\n");
    for g in gains {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            g.layer_set,
            g.k.map_or_else(|| "continuous".to_string(), |k| k.to_string()),
            g.aug,
            g.base_f1,
            g.aug_f1,
            g.gain_percent
        );
    }
    out
}

/// Gain of one category for one layer set (first K found), for quick checks.
pub fn category_gain(gains: &[GainRow], layer_set: &str, category: CategoryName) -> Option<f64> {
    gains
        .iter()
        .find(|g| g.layer_set == layer_set && g.aug == Augmentation::Category(category))
        .map(|g| g.gain_percent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(set: &str, n: usize, aug: Augmentation, f1: f64) -> ResultRow {
        ResultRow {
            layer_set: set.into(),
            k: Some(256),
            seed: None,
            aug,
            macro_f1: f1,
            per_class_f1: [f1; N_CLASSES],
            alpha: vec![None; MAX_LAYERS],
            n_streams: n,
        }
    }

    #[test]
    fn gain_arithmetic() {
        assert!((gain_percent(0.30, 0.312) - 4.0).abs() < 1e-9);
        assert_eq!(gain_percent(0.3, 0.3), 0.0);
    }

    #[test]
    fn gains_are_ordered_sparse_to_dense() {
        let p = Augmentation::Category(CategoryName::Prosody);
        let rows = vec![
            row("all", 24, Augmentation::None, 0.5),
            row("all", 24, p, 0.51),
            row("sparse", 6, Augmentation::None, 0.4),
            row("sparse", 6, p, 0.44),
        ];
        let g = augmentation_report(&rows).unwrap();
        assert_eq!(g[0].layer_set, "sparse");
        assert!((g[0].gain_percent - 10.0).abs() < 1e-9);
        assert_eq!(
            category_gain(&g, "all", CategoryName::Prosody).map(|x| (x * 1e6).round()),
            Some(2e6)
        );
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let rows = vec![row("all", 24, Augmentation::All, 0.5)];
        assert!(augmentation_report(&rows).is_err());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let h = csv_header();
        assert_eq!(h.split(',').count(), 5 + 8 + 24);
        assert!(h.starts_with("layer_set,K,seed,aug,macro_f1,f1_c0"));
        assert!(h.ends_with("alpha_l23"));
        let csv = render_csv(&[row("last_only", 1, Augmentation::None, 0.25)]);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 37);
        assert!(line.starts_with("last_only,256,mean,none,0.25,"));
    }

    #[test]
    fn single_seed_mean_equals_its_row() {
        let mut r = row("all", 24, Augmentation::None, 0.37);
        r.seed = Some(0);
        r.alpha[3] = Some(1.0);
        let m = average_rows(std::slice::from_ref(&r)).unwrap();
        assert_eq!(m.macro_f1, r.macro_f1);
        assert_eq!(m.alpha, r.alpha);
        assert_eq!(m.seed, None);
    }
}
