use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 7] = [
    "gen",
    "codebooks",
    "tokenize",
    "train",
    "eval",
    "sweep",
    "gradcheck",
];

fn disq() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_disq"));
    cmd.env_remove("DISQ_RUN_DIR");
    cmd
}

fn run(args: &[&str]) -> Output {
    disq().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_spec(dir: &Path) -> PathBuf {
    let path = dir.join("spec.json");
    let spec = serde_json::json!({
        "n_per_class": 10,
        "layer_count": 4,
        "feature_dim": 6,
        "t_range": [4, 8],
        "layer_informativeness": [0.0, 0.5, 0.5, 1.0],
        "paralinguistic_gain": 1.0,
        "noise_sigma": 0.5,
        "seed": 3
    });
    fs::write(&path, spec.to_string()).unwrap();
    path
}

/// Generates the small dataset under `dir/gen` and returns its manifest directory.
fn gen_small(dir: &Path) -> PathBuf {
    let spec = small_spec(dir);
    let out = dir.join("gen");
    ok(&["--out", s(&out), "gen", "--spec", s(&spec)]);
    out.join("dataset")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr is not a JSON error line: {text}"))
}

#[test]
fn every_flag_is_documented() {
    for sub in SUBCOMMANDS {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut flags = 0;
        for (i, line) in lines.iter().enumerate() {
            let trimmed = line.trim_start();
            if !trimmed.starts_with('-') {
                continue;
            }
            flags += 1;
            let described = match trimmed.find("  ") {
                Some(at) => !trimmed[at..].trim().is_empty(),
                None => lines
                    .get(i + 1)
                    .is_some_and(|n| !n.trim().is_empty() && !n.trim_start().starts_with('-')),
            };
            assert!(described, "`disq {sub}`: undocumented flag line `{line}`");
        }
        assert!(flags >= 3, "`disq {sub} --help` lists {flags} flags");
    }
}

#[test]
fn gradcheck_passes_on_seed_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--out", s(dir.path()), "gradcheck", "--seed", "0"]);
    let reports: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert!(reports[0]["max_rel_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn one_cell_sweep_writes_a_seed_row_and_a_mean_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let out = dir.path().join("sweep");
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        r#"{"ks": [8], "layer_sets": ["custom:1,3"], "seeds": [0], "train": {"epochs": 2, "hidden": 8}}"#,
    )
    .unwrap();
    ok(&[
        "--out",
        s(&out),
        "sweep",
        "--manifest",
        s(&data),
        "--grid",
        s(&grid),
    ]);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(
        rows[0].starts_with("custom:1,3") || rows[0].starts_with("\"custom:1,3\""),
        "{csv}"
    );
    let seed_col = |row: &str| {
        row.rsplit_once("custom:1,3")
            .unwrap()
            .1
            .split(',')
            .nth(2)
            .unwrap()
            .to_string()
    };
    assert_eq!(seed_col(rows[0]), "0");
    assert_eq!(seed_col(rows[1]), "mean");
}

#[test]
fn pipeline_reruns_are_byte_identical_and_leave_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let inputs = tree(&data);

    let pipeline = |root: &Path| {
        let cb = root.join("cb");
        let tr = root.join("tr");
        ok(&[
            "--out",
            s(&cb),
            "codebooks",
            "--manifest",
            s(&data),
            "--layers",
            "1,3",
            "--k",
            "8",
            "--opensmile",
        ]);
        ok(&[
            "--out",
            s(&root.join("tok")),
            "tokenize",
            "--manifest",
            s(&data),
            "--codebooks",
            s(&cb),
        ]);
        ok(&[
            "--out",
            s(&tr),
            "train",
            "--manifest",
            s(&data),
            "--codebooks",
            s(&cb),
            "--layer-set",
            "custom:1,3",
            "--k",
            "8",
            "--aug",
            "prosody",
            "--epochs",
            "2",
            "--hidden",
            "8",
        ]);
        ok(&[
            "--out",
            s(&root.join("ev")),
            "eval",
            "--checkpoint",
            s(&tr.join("checkpoint")),
            "--manifest",
            s(&data),
            "--codebooks",
            s(&cb),
        ]);
        let grid = root.join("grid.json");
        fs::write(
            &grid,
            r#"{"layer_sets": ["custom:1,3", "custom:3"], "augmentations": ["none", "prosody"], "train": {"hidden": 8}}"#,
        )
        .unwrap();
        ok(&[
            "--out",
            s(&root.join("sw")),
            "--workers",
            "2",
            "sweep",
            "--manifest",
            s(&data),
            "--grid",
            s(&grid),
            "--ks",
            "8",
            "--seeds",
            "0,1",
            "--epochs",
            "2",
        ]);
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a);
    pipeline(&b);

    let strip = |t: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        t.into_iter()
            .filter(|(p, _)| p.file_name().unwrap() != "run.json")
            .collect()
    };
    let (ta, tb) = (strip(tree(&a)), strip(tree(&b)));
    assert!(ta.len() > 10);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(
            tb[path] == *bytes,
            "{} differs between reruns",
            path.display()
        );
    }
    assert!(tree(&data) == inputs, "inputs were modified");
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();

    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["category"], "config");

    let out = run(&["--out", s(dir.path()), "--workers", "0", "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nowhere");
    let out = run(&[
        "--out",
        s(&dir.path().join("x")),
        "train",
        "--manifest",
        s(&missing),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_line(&out);
    assert_eq!(err["category"], "data");
    assert!(err["message"].as_str().unwrap().contains("nowhere"));

    let data = gen_small(dir.path());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"epochs": 2, "bogus": 1}}"#).unwrap();
    let out = run(&[
        "--out",
        s(&dir.path().join("y")),
        "train",
        "--manifest",
        s(&data),
        "--config",
        s(&bad),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"]
        .as_str()
        .unwrap()
        .contains("bogus"));

    let huge = dir.path().join("huge.json");
    fs::write(
        &huge,
        r#"{"train": {"learning_rate": 1e300, "epochs": 1, "hidden": 8}}"#,
    )
    .unwrap();
    let out = run(&[
        "--out",
        s(&dir.path().join("z")),
        "train",
        "--manifest",
        s(&data),
        "--config",
        s(&huge),
        "--layer-set",
        "custom:3",
        "--k",
        "8",
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(error_line(&out)["category"], "numeric");

    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_directory_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs-here");
    let out = disq()
        .env("DISQ_RUN_DIR", &root)
        .current_dir(dir.path())
        .args(["gradcheck", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let entries: Vec<String> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0].starts_with("gradcheck-"), "{entries:?}");
    assert!(root.join(&entries[0]).join("run.json").is_file());
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn shipped_configs_load() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let spec: disq::dataio::SyntheticSpec =
        serde_json::from_str(&fs::read_to_string(configs.join("reference_spec.json")).unwrap())
            .unwrap();
    assert_eq!(spec, disq::dataio::SyntheticSpec::reference());
    for grid in ["grid_small.json", "grid_full.json"] {
        let g: disq::eval::SweepGrid =
            serde_json::from_str(&fs::read_to_string(configs.join(grid)).unwrap()).unwrap();
        g.validate().unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    ok(&[
        "--out",
        s(&dir.path().join("tr")),
        "train",
        "--manifest",
        s(&data),
        "--config",
        s(&configs.join("train.json")),
        "--layer-set",
        "custom:2,3",
        "--k",
        "8",
        "--epochs",
        "1",
        "--hidden",
        "8",
    ]);
}
