//! Run directories, run metadata and config loading.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use disq::{Error, Result};

/// Default output root when neither `--out` nor `DISQ_RUN_DIR` is given.
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const RUN_DIR_ENV: &str = "DISQ_RUN_DIR";
pub const METADATA_FILE: &str = "run.json";

/// Everything recorded about one invocation besides its primary outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command_line: Vec<String>,
    pub subcommand: String,
    /// SHA-256 of the effective configuration (canonical JSON).
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    /// Relative to the run directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub disq: &'static str,
    pub feature_format: u16,
}

pub struct Run {
    pub dir: PathBuf,
    subcommand: String,
    config: serde_json::Value,
    digest: String,
    seeds: Vec<u64>,
    outputs: Vec<String>,
    started: Instant,
}

/// Canonical digest of a serializable configuration.
pub fn config_digest(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Run {
    /// Creates the run directory: `out` when given, otherwise
    /// `$DISQ_RUN_DIR/<subcommand>-<digest prefix>` (root defaults to `runs`).
    pub fn start(
        subcommand: &str,
        out: Option<&Path>,
        config: impl Serialize,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let config = serde_json::to_value(config).expect("config serializes");
        let digest =
            config_digest(&serde_json::json!({ "subcommand": subcommand, "config": config }));
        let dir = match out {
            Some(d) => d.to_path_buf(),
            None => {
                let root = std::env::var_os(RUN_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT));
                root.join(format!("{subcommand}-{}", &digest[..12]))
            }
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            subcommand: subcommand.to_string(),
            config,
            digest,
            seeds,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Records and writes a primary output file.
    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.record(rel);
        Ok(path)
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("output serializes");
        self.write(rel, text + "\n")
    }

    /// Notes an output written by other means.
    pub fn record(&mut self, rel: &str) {
        if !self.outputs.iter().any(|o| o == rel) {
            self.outputs.push(rel.to_string());
        }
    }

    pub fn finish(self) -> Result<PathBuf> {
        let meta = RunMetadata {
            command_line: std::env::args().collect(),
            subcommand: self.subcommand,
            config_digest: self.digest,
            config: self.config,
            seeds: self.seeds,
            versions: Versions {
                disq: env!("CARGO_PKG_VERSION"),
                feature_format: disq::dataio::dsqf::VERSION,
            },
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let path = self.dir.join(METADATA_FILE);
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.dir)
    }
}

/// Parses a JSON config file; schema violations name the offending field path.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::config(
            if field == "." {
                "<root>".to_string()
            } else {
                field
            },
            format!("{} ({})", e.inner(), path.display()),
        )
    })
}
