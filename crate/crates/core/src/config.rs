//! Run configuration: a TOML file with every key optional except the
//! scenario, and unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjoint::{SolverBackend, DEFAULT_DEGREE};
use crate::error::{Error, Result};

/// Smallest accepted path count.
pub const MIN_PATHS: usize = 100;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "STOPPING_SMP_OUT";

fn default_paths() -> usize {
    10_000
}

fn default_seed() -> u64 {
    1
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

fn default_tol() -> f64 {
    3.0
}

fn default_thetas() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}

fn default_example_n() -> usize {
    4
}

fn default_budget() -> usize {
    crate::smp_check::DEFAULT_TIME_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `T`, a constant time, or `hit:LEVEL` / `hit:COORD:LEVEL`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default = "default_thetas")]
    pub theta: Vec<f64>,
    /// `closed` or `regress`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
    #[serde(default = "default_tol")]
    pub tol_mult: f64,
    #[serde(default = "default_example_n")]
    pub example_n: usize,
    /// Number of sampled times in the Hamiltonian-gap check.
    #[serde(default = "default_budget")]
    pub time_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            paths: default_paths(),
            seed: default_seed(),
            out: None,
            tau: None,
            n_list: None,
            eps: None,
            theta: default_thetas(),
            backend: None,
            basis_degree: default_degree(),
            tol_mult: default_tol(),
            example_n: default_example_n(),
            time_budget: default_budget(),
            threads: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.paths < MIN_PATHS {
            return fail(format!(
                "paths = {} is below the minimum of {MIN_PATHS}",
                self.paths
            ));
        }
        if let Some(ns) = &self.n_list {
            if ns.is_empty() || ns.contains(&0) {
                return fail("n_list must be a non-empty list of positive sizes".into());
            }
        }
        if let Some(eps) = &self.eps {
            if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
                return fail("eps must be a non-empty list of values in (0, 1)".into());
            }
        }
        if self.theta.is_empty() || self.theta.iter().any(|&t| !(t > 0.0)) {
            return fail("theta must be a non-empty list of positive values".into());
        }
        if !(self.tol_mult >= 0.0) {
            return fail("tol_mult must be non-negative".into());
        }
        if self.example_n == 0 || self.time_budget == 0 {
            return fail("example_n and time_budget must be positive".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be positive".into());
        }
        self.solver_backend()?;
        Ok(())
    }

    /// Backend from `backend` and `basis_degree`; `None` keeps the
    /// scenario's default.
    pub fn solver_backend(&self) -> Result<Option<SolverBackend>> {
        match self.backend.as_deref() {
            None => Ok(None),
            Some("closed") => Ok(Some(SolverBackend::ClosedForm)),
            Some("regress") => Ok(Some(SolverBackend::Regression {
                degree: self.basis_degree,
            })),
            Some(other) => Err(Error::Config(format!(
                "unknown adjoint backend '{other}' (closed|regress)"
            ))),
        }
    }

    /// Output directory: the configured one, else `$STOPPING_SMP_OUT`, else `out`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Canonical text used for the metadata hash.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.threads = None;
        toml::to_string(&c).expect("config serializes")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse("scenario = \"constant\"\npaths = 1000\nseed = 1\n").unwrap();
        assert_eq!(c.paths, 1000);
        assert_eq!(c.basis_degree, DEFAULT_DEGREE);
        assert_eq!(c.theta, default_thetas());
        assert_eq!(c.tol_mult, 3.0);
        assert_eq!(c.solver_backend().unwrap(), None);
    }

    #[test]
    fn rejects_low_path_count() {
        let e = RunConfig::parse("scenario = \"constant\"\npaths = 10\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("paths")));
    }

    #[test]
    fn rejects_unknown_key_by_name() {
        let e = RunConfig::parse("scenario = \"constant\"\npathz = 1000\n").unwrap_err();
        assert!(
            matches!(e, Error::Config(ref m) if m.contains("pathz")),
            "{e:?}"
        );
    }

    #[test]
    fn rejects_bad_lists_and_backend() {
        assert!(RunConfig::parse("scenario = \"x\"\neps = []\n").is_err());
        assert!(RunConfig::parse("scenario = \"x\"\neps = [1.5]\n").is_err());
        assert!(RunConfig::parse("scenario = \"x\"\ntheta = [0.0]\n").is_err());
        assert!(RunConfig::parse("scenario = \"x\"\nbackend = \"magic\"\n").is_err());
        let c = RunConfig::parse("scenario = \"x\"\nbackend = \"regress\"\nbasis_degree = 3\n")
            .unwrap();
        assert_eq!(
            c.solver_backend().unwrap(),
            Some(SolverBackend::Regression { degree: 3 })
        );
    }

    #[test]
    fn canonical_ignores_output_location() {
        let mut a = RunConfig::new("linear");
        let mut b = a.clone();
        a.out = Some("x".into());
        b.threads = Some(4);
        assert_eq!(a.canonical(), b.canonical());
        let round = RunConfig::parse(&a.canonical()).unwrap();
        assert_eq!(round.scenario, "linear");
    }
}
