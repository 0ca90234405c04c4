//! Report files: CSVs with a metadata header and the run summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::Result;
use crate::scenarios::Check;

/// Provenance written as `#` lines at the top of every CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub paths: usize,
}

impl Metadata {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            scenario: cfg.scenario.clone(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            paths: cfg.paths,
        }
    }

    pub fn header(&self) -> String {
        format!(
            "# stopping-smp {} {}\n# command={} scenario={} config_sha256={} seed={} paths={}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.scenario,
            self.config_hash,
            self.seed,
            self.paths
        )
    }
}

/// SHA-256 of the canonical configuration, hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes CSV files into one output directory.
pub struct ReportWriter {
    dir: PathBuf,
    meta: Metadata,
    written: Vec<PathBuf>,
}

impl ReportWriter {
    pub fn new(dir: &Path, meta: Metadata) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            written: Vec::new(),
        })
    }

    pub fn write_csv(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut text = self.meta.header();
        text.push_str(body);
        std::fs::write(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_summary(&mut self, checks: &[Check]) -> Result<PathBuf> {
        self.write_csv("summary.csv", &summary_csv(checks))
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn summary_csv(checks: &[Check]) -> String {
    let mut out = String::from("name,value,tolerance,pass\n");
    for c in checks {
        let _ = writeln!(out, "{},{},{},{}", c.name, c.value, c.tolerance, c.pass);
    }
    out
}
