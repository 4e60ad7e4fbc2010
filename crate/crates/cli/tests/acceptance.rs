//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use disq::dataio::{synthesize, Dataset, FeatureSequence, Split, SyntheticSpec, N_CLASSES};
use disq::eval::{
    evaluate, gain_percent, macro_f1, train_pipeline, Augmentation, CodebookCache, ConfusionMatrix,
    PipelineConfig,
};
use disq::fusion::LayerSet;
use disq::model::{gradient_check, TrainConfig};
use disq::quantize::{
    assign, kmeans_fit, rvq_decode, rvq_encode, rvq_fit, CategoryName, KMeansParams,
};
use disq::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed < Duration::from_secs(budget_s)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..3 {
        match gradient_check(seed) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let el = t.elapsed();
    outcome(
        worst < 1e-3 && within(el, 60),
        format!("max relative error {worst:.2e} over 3 seeds in {el:.1?}"),
    )
}

fn c2_kmeans() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 200;
    for i in 0..instances {
        let n = rng.random_range(1..=1000);
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=16usize).min(n);
        let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-5.0f32..5.0));
        let cb = match kmeans_fit(&x, k, i, KMeansParams::default(), "c2") {
            Ok(cb) => cb,
            Err(e) => return outcome(false, format!("instance {i}: {e}")),
        };
        if cb.distortion_history.windows(2).any(|w| w[1] > w[0]) {
            return outcome(
                false,
                format!("instance {i}: distortion rose {:?}", cb.distortion_history),
            );
        }
        let h = FeatureSequence::new(x.clone(), "c2").unwrap();
        let tokens = assign(&cb, &h).unwrap();
        for (r, row) in x.iter_rows().enumerate() {
            let mut best = (0usize, f32::INFINITY);
            for c in 0..k {
                let dist: f32 = cb
                    .centroids
                    .row(c)
                    .iter()
                    .zip(row)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            if tokens.indices[r] as usize != best.0 {
                return outcome(
                    false,
                    format!(
                        "instance {i} row {r}: {} vs brute force {}",
                        tokens.indices[r], best.0
                    ),
                );
            }
        }
    }
    let el = t.elapsed();
    outcome(
        within(el, 30),
        format!("{instances} random instances in {el:.1?}"),
    )
}

fn train_frames(ds: &Dataset<f32>, layer: usize) -> Matrix<f32> {
    let rows: Vec<Vec<f32>> = ds
        .split(Split::Train)
        .flat_map(|u| {
            let f = &u.layers[layer].frames;
            (0..f.rows())
                .filter(|&t| u.frame_mask[t])
                .map(|t| f.row(t).to_vec())
                .collect::<Vec<_>>()
        })
        .collect();
    Matrix::from_rows(&rows)
}

fn c3_distortion(ds: &Dataset<f32>, cache: &CodebookCache) -> Outcome {
    let t = Instant::now();
    let mut d = Vec::new();
    for k in [256, 512, 1000] {
        match cache.layer_codebook(ds, 23, k, 0, KMeansParams::default()) {
            Ok(cb) => d.push(cb.final_distortion),
            Err(e) => return outcome(false, format!("K={k}: {e}")),
        }
    }
    outcome(
        d[0] > d[1] && d[1] > d[2],
        format!(
            "layer 23 distortion K=256/512/1000: {:.4} > {:.4} > {:.4} ({:.1?})",
            d[0],
            d[1],
            d[2],
            t.elapsed()
        ),
    )
}

fn c4_rvq(ds: &Dataset<f32>) -> Outcome {
    let t = Instant::now();
    let x = train_frames(ds, 23);
    let h = FeatureSequence::new(x.clone(), "c4").unwrap();
    let stages = [1, 2, 4, 8];
    let mut worst_ratio = 0.0f64;
    for seed in 0..5 {
        let rvq = rvq_fit(&x, 8, 16, seed, KMeansParams::default(), "c4").unwrap();
        let tokens = rvq_encode(&rvq, &h).unwrap();
        let mse: Vec<f64> = stages
            .iter()
            .map(|&s| rvq_decode(&rvq, &tokens, s).unwrap().frames.mse(&x))
            .collect();
        for w in mse.windows(2) {
            if w[1] > w[0] * (1.0 + f64::from(f32::EPSILON)) {
                return outcome(
                    false,
                    format!("seed {seed}: MSE over stages {stages:?} = {mse:?}"),
                );
            }
            worst_ratio = worst_ratio.max(w[1] / w[0]);
        }
    }
    outcome(
        true,
        format!("MSE non-increasing over stages {stages:?} on 5 seeds, largest step ratio {worst_ratio:.4} ({:.1?})", t.elapsed()),
    )
}

/// Seed-averaged results of one configuration on the reference dataset.
struct CellResult {
    test_f1: f64,
    dev_late_alpha: f64,
}

fn run_config(
    ds: &Dataset<f32>,
    cache: &CodebookCache,
    set: LayerSet,
    k: Option<usize>,
    aug: Augmentation,
) -> disq::Result<CellResult> {
    let mut pipeline = PipelineConfig::layers(set, k);
    pipeline.augmentation = aug;
    let (mut f1, mut mass) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let train = TrainConfig {
            seed,
            epochs: 20,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (model, data) = train_pipeline(ds, &pipeline, &train, cache)?;
        f1.push(evaluate(&model.params, &data.split(Split::Test).examples)?.macro_f1);
        let dev = evaluate(&model.params, &data.split(Split::Dev).examples)?;
        let cols = pipeline.streams.stream_columns();
        mass.push(
            cols.iter()
                .zip(&dev.mean_alpha)
                .filter(|(l, _)| [22, 23].contains(*l))
                .map(|(_, a)| a)
                .sum(),
        );
    }
    Ok(CellResult {
        test_f1: mean(&f1),
        dev_late_alpha: mean(&mass),
    })
}

fn c5_to_c8(ds: &Dataset<f32>, cache: &CodebookCache) -> [Outcome; 4] {
    let t = Instant::now();
    let prosody = Augmentation::Category(CategoryName::Prosody);
    let configs = [
        ("all", LayerSet::All, Some(256), Augmentation::None),
        (
            "last_only",
            LayerSet::LastOnly,
            Some(256),
            Augmentation::None,
        ),
        ("all continuous", LayerSet::All, None, Augmentation::None),
        (
            "last_only continuous",
            LayerSet::LastOnly,
            None,
            Augmentation::None,
        ),
        ("sparse", LayerSet::Sparse, Some(256), Augmentation::None),
        ("sparse+prosody", LayerSet::Sparse, Some(256), prosody),
        ("all+prosody", LayerSet::All, Some(256), prosody),
    ];
    let mut r = BTreeMap::new();
    for (name, set, k, aug) in configs {
        match run_config(ds, cache, set, k, aug) {
            Ok(c) => {
                r.insert(name, c);
            }
            Err(e) => {
                let fail = || outcome(false, format!("{name}: {e}"));
                return [fail(), fail(), fail(), fail()];
            }
        }
    }
    let el = t.elapsed();
    let f1 = |n: &str| r[n].test_f1;

    let diff = f1("all") - f1("last_only");
    let c5 = outcome(
        diff >= 0.02 && within(el, 15 * 60),
        format!(
            "K=256 all {:.4} vs last_only {:.4} (+{diff:.4}); 7 configs x 3 seeds in {el:.0?}",
            f1("all"),
            f1("last_only")
        ),
    );

    let gaps = [
        f1("all") - f1("all continuous"),
        f1("last_only") - f1("last_only continuous"),
    ];
    let c6 = outcome(
        gaps.iter().all(|&g| g <= 0.01),
        format!(
            "continuous/discrete all {:.4}/{:.4}, last_only {:.4}/{:.4}",
            f1("all continuous"),
            f1("all"),
            f1("last_only continuous"),
            f1("last_only")
        ),
    );

    let sparse_gain = gain_percent(f1("sparse"), f1("sparse+prosody"));
    let all_gain = gain_percent(f1("all"), f1("all+prosody"));
    let c7 = outcome(
        sparse_gain.is_finite()
            && all_gain.is_finite()
            && sparse_gain > 0.0
            && sparse_gain > all_gain,
        format!("prosody gain sparse {sparse_gain:+.1}% vs all {all_gain:+.1}%"),
    );

    let mass = r["all"].dev_late_alpha;
    let c8 = outcome(
        mass > 0.5,
        format!("dev mean alpha(22)+alpha(23) = {mass:.3} for K=256 all"),
    );
    [c5, c6, c7, c8]
}

fn c9_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut cm = ConfusionMatrix::default();
        let sparse = rng.random_bool(0.3);
        for row in cm.counts.iter_mut() {
            for v in row.iter_mut() {
                *v = if sparse && rng.random_bool(0.6) {
                    0
                } else {
                    rng.random_range(0..50)
                };
            }
        }
        if cm.counts.iter().flatten().all(|&v| v == 0) {
            cm.counts[0][0] = 1;
        }
        let mut reference = 0.0;
        for c in 0..N_CLASSES {
            let tp = cm.counts[c][c];
            let fp: u64 = (0..N_CLASSES)
                .filter(|&r| r != c)
                .map(|r| cm.counts[r][c])
                .sum();
            let fn_: u64 = (0..N_CLASSES)
                .filter(|&p| p != c)
                .map(|p| cm.counts[c][p])
                .sum();
            let denom = 2 * tp + fp + fn_;
            if denom > 0 {
                reference += 2.0 * tp as f64 / denom as f64;
            }
        }
        reference /= N_CLASSES as f64;
        worst = worst.max((macro_f1(&cm).unwrap() - reference).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("largest deviation {worst:.1e} over 1000 random confusion matrices"),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run.json" {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn cli_pass(root: &Path) -> Result<(), String> {
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    let spec = root.join("spec.json");
    let mut small = SyntheticSpec::reference();
    small.n_per_class = 12;
    small.feature_dim = 16;
    fs::write(&spec, serde_json::to_string(&small).unwrap()).unwrap();
    let grid = root.join("grid.json");
    fs::write(
        &grid,
        r#"{"ks": [16], "layer_sets": ["sparse", "last_only"], "augmentations": ["none", "prosody"], "seeds": [0, 1], "train": {"epochs": 2, "hidden": 16}}"#,
    )
    .unwrap();
    let data = format!("{}/dataset", p("gen"));
    let steps: Vec<Vec<String>> = vec![
        vec!["--out", &p("gen"), "gen", "--spec", spec.to_str().unwrap()],
        vec![
            "--out",
            &p("cb"),
            "codebooks",
            "--manifest",
            &data,
            "--layer-set",
            "sparse",
            "--k",
            "16",
            "--opensmile",
        ],
        vec![
            "--out",
            &p("tok"),
            "tokenize",
            "--manifest",
            &data,
            "--codebooks",
            &p("cb"),
        ],
        vec![
            "--out",
            &p("tr"),
            "train",
            "--manifest",
            &data,
            "--codebooks",
            &p("cb"),
            "--layer-set",
            "sparse",
            "--k",
            "16",
            "--aug",
            "all",
            "--epochs",
            "3",
            "--hidden",
            "16",
        ],
        vec![
            "--out",
            &p("ev"),
            "eval",
            "--checkpoint",
            &format!("{}/checkpoint", p("tr")),
            "--manifest",
            &data,
            "--codebooks",
            &p("cb"),
        ],
        vec![
            "--out",
            &p("sw"),
            "--workers",
            "2",
            "sweep",
            "--manifest",
            &data,
            "--grid",
            grid.to_str().unwrap(),
        ],
        vec!["--out", &p("gc"), "gradcheck", "--seed", "0,1"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_disq"))
            .args(&args)
            .env_remove("DISQ_RUN_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    Ok(())
}

fn c10_determinism() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for root in [&a, &b] {
        fs::create_dir_all(root).unwrap();
        if let Err(e) = cli_pass(root) {
            return outcome(false, e);
        }
    }
    let (ta, tb) = (tree(&a), tree(&b));
    if ta.keys().ne(tb.keys()) {
        return outcome(false, "reruns wrote different file sets");
    }
    if let Some((path, _)) = ta.iter().find(|(path, bytes)| tb[*path] != **bytes) {
        return outcome(false, format!("{} differs between reruns", path.display()));
    }
    outcome(
        true,
        format!(
            "all 7 subcommands rerun: {} output files byte-identical ({:.1?})",
            ta.len(),
            t.elapsed()
        ),
    )
}

fn main() {
    let report = |id: &str, title: &str, o: &Outcome| {
        println!(
            "{} {id} {title}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    let mut results = Vec::new();
    let mut record = |id: &'static str, title: &'static str, o: Outcome| {
        report(id, title, &o);
        results.push(o.pass);
    };

    record("C1", "gradient oracle", c1_gradients());
    record("C2", "k-means oracle", c2_kmeans());

    let ds = synthesize(&SyntheticSpec::reference()).expect("reference dataset");
    let cache = CodebookCache::new();
    record(
        "C3",
        "distortion decreases with K",
        c3_distortion(&ds, &cache),
    );
    record("C4", "residual quantizer monotonicity", c4_rvq(&ds));
    let [c5, c6, c7, c8] = c5_to_c8(&ds, &cache);
    record("C5", "multi-layer beats single layer", c5);
    record("C6", "continuous at least discrete", c6);
    record("C7", "augmentation helps sparse sets most", c7);
    record("C8", "attention concentrates on planted layers", c8);
    record("C9", "metric oracle", c9_metric());
    record("C10", "CLI determinism", c10_determinism());

    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
