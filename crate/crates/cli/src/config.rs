//! Experiment configuration. Keys in a config file are the field names of
//! [`ExperimentConfig`]; command-line flags override them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssmamp_core::matrix::rows_for;
use ssmamp_core::rmt::{EnsembleKind, EnsembleSpec, DEFAULT_TRUNCATION};
use ssmamp_core::{ChiMode, Expectation, Prior, ReplicaOptions, SolverOptions, SolverPath, VSchedule};

use crate::error::{CliError, Result};

pub const MIN_K: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `iid_gaussian` or `row_orthogonal`.
    pub ensemble: String,
    /// `bernoulli_gaussian` or `gaussian`.
    pub prior: String,
    pub rho: f64,
    pub prior_variance: f64,
    pub k: usize,
    pub alpha: f64,
    pub xi: f64,
    /// `auto`, `generic`, `specialized` or `amp`.
    pub path: String,
    pub max_iters: usize,
    /// `inf` disables early stopping.
    pub tol: f64,
    pub chi_mode: String,
    pub v_schedule: String,
    /// Weight of the new estimate; 1 is undamped.
    pub damping: f64,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Any of `csv`, `txt`.
    pub formats: Vec<String>,
    /// Iterations at which field Gaussianity is checked, besides the last one.
    pub field_check_iters: Vec<usize>,
    /// State-evolution agreement is checked for `t <= check_horizon`.
    pub check_horizon: usize,
    pub truncation: usize,
    /// `adaptive` or `gauss_hermite:<order>`.
    pub quadrature: String,
    /// Directory written by `gen`; instances are synthesized when absent.
    pub input: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ensemble: "iid_gaussian".into(),
            prior: "bernoulli_gaussian".into(),
            rho: 0.1,
            prior_variance: 1.0,
            k: 1000,
            alpha: 0.5,
            xi: 100.0,
            path: "auto".into(),
            max_iters: 100,
            tol: 1e-10,
            chi_mode: "empirical".into(),
            v_schedule: "tap".into(),
            damping: 1.0,
            trials: 1,
            seed: 0,
            output: PathBuf::from("ssmamp-out"),
            formats: vec!["csv".into(), "txt".into()],
            field_check_iters: vec![1, 5],
            check_horizon: 10,
            truncation: DEFAULT_TRUNCATION,
            quadrature: "adaptive".into(),
            input: None,
        }
    }
}

/// Parsed, validated form of a config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub ensemble: EnsembleSpec,
    pub prior: Prior,
    pub solver: SolverOptions,
    pub quadrature: Expectation,
    pub n_rows: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::ConfigParse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// TOML with every field spelled out; `tol = inf` is valid TOML.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let list = |v: &[String]| v.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "ensemble = {:?}", self.ensemble);
        let _ = writeln!(out, "prior = {:?}", self.prior);
        let _ = writeln!(out, "rho = {}", toml_float(self.rho));
        let _ = writeln!(out, "prior_variance = {}", toml_float(self.prior_variance));
        let _ = writeln!(out, "k = {}", self.k);
        let _ = writeln!(out, "alpha = {}", toml_float(self.alpha));
        let _ = writeln!(out, "xi = {}", toml_float(self.xi));
        let _ = writeln!(out, "path = {:?}", self.path);
        let _ = writeln!(out, "max_iters = {}", self.max_iters);
        let _ = writeln!(out, "tol = {}", toml_float(self.tol));
        let _ = writeln!(out, "chi_mode = {:?}", self.chi_mode);
        let _ = writeln!(out, "v_schedule = {:?}", self.v_schedule);
        let _ = writeln!(out, "damping = {}", toml_float(self.damping));
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "output = {:?}", self.output.display().to_string());
        let _ = writeln!(out, "formats = [{}]", list(&self.formats));
        let iters: Vec<String> = self.field_check_iters.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "field_check_iters = [{}]", iters.join(", "));
        let _ = writeln!(out, "check_horizon = {}", self.check_horizon);
        let _ = writeln!(out, "truncation = {}", self.truncation);
        let _ = writeln!(out, "quadrature = {:?}", self.quadrature);
        if let Some(p) = &self.input {
            let _ = writeln!(out, "input = {:?}", p.display().to_string());
        }
        out
    }

    pub fn writes(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f.eq_ignore_ascii_case(format))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let bad = |m: String| CliError::Config(m);
        if self.k < MIN_K {
            return Err(bad(format!("k = {} is below the minimum {MIN_K}", self.k)));
        }
        if self.trials == 0 {
            return Err(bad("trials must be at least 1".into()));
        }
        let kind: EnsembleKind = self.ensemble.parse()?;
        let ensemble = EnsembleSpec::new(kind, self.alpha, self.xi)?.with_truncation(self.truncation)?;
        let n_rows = rows_for(self.alpha, self.k);
        if n_rows == 0 {
            return Err(bad(format!("round(alpha * k) = 0 for alpha = {}, k = {}", self.alpha, self.k)));
        }
        let prior = match self.prior.to_ascii_lowercase().replace('-', "_").as_str() {
            "bernoulli_gaussian" | "bg" => Prior::bernoulli_gaussian(self.rho)?,
            "gaussian" => Prior::gaussian(self.prior_variance)?,
            other => return Err(bad(format!("unknown prior '{other}'"))),
        };
        let path = match self.path.to_ascii_lowercase().as_str() {
            "auto" => SolverPath::preferred_for(&ensemble),
            other => other.parse::<SolverPath>()?,
        };
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(bad(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(bad(format!("tol must be positive (or inf), got {}", self.tol)));
        }
        for f in &self.formats {
            if !matches!(f.to_ascii_lowercase().as_str(), "csv" | "txt") {
                return Err(bad(format!("unknown output format '{f}'")));
            }
        }
        let quadrature = parse_quadrature(&self.quadrature)?;
        let solver = SolverOptions {
            path,
            max_iters: self.max_iters,
            tol: self.tol.is_finite().then_some(self.tol),
            damping: (self.damping < 1.0).then_some(self.damping),
            chi_mode: self.chi_mode.parse::<ChiMode>()?,
            v_schedule: self.v_schedule.parse::<VSchedule>()?,
            capture_fields: self.field_check_iters.clone(),
            capture_final_field: true,
            record_iterates: false,
            track_correlation: false,
            tap_diagnostics: true,
            replica: ReplicaOptions {
                quadrature: quadrature.clone(),
                ..ReplicaOptions::default()
            },
        };
        Ok(Resolved {
            ensemble,
            prior,
            solver,
            quadrature,
            n_rows,
        })
    }
}

fn toml_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x.is_nan() {
        "nan".into()
    } else {
        // `{:?}` keeps a decimal point or exponent, so the value stays a float.
        format!("{x:?}")
    }
}

pub fn parse_quadrature(s: &str) -> Result<Expectation> {
    let s = s.trim().to_ascii_lowercase();
    if s == "adaptive" {
        return Ok(Expectation::default());
    }
    if let Some(order) = s.strip_prefix("gauss_hermite:").or_else(|| s.strip_prefix("gh:")) {
        let n: usize = order
            .parse()
            .map_err(|_| CliError::Config(format!("bad Gauss-Hermite order '{order}'")))?;
        if n < 2 {
            return Err(CliError::Config("Gauss-Hermite order must be at least 2".into()));
        }
        return Ok(Expectation::gauss_hermite(n));
    }
    Err(CliError::Config(format!("unknown quadrature '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let r = ExperimentConfig::default().resolve().unwrap();
        assert_eq!(r.solver.path, SolverPath::Amp);
        assert_eq!(r.n_rows, 500);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            tol: f64::INFINITY,
            input: Some("x/y".into()),
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml(), Path::new("mem")).unwrap();
        assert_eq!(back, cfg);
        assert!(back.resolve().unwrap().solver.tol.is_none());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for cfg in [
            ExperimentConfig { k: 8, ..Default::default() },
            ExperimentConfig { trials: 0, ..Default::default() },
            ExperimentConfig { alpha: 0.001, k: 100, ..Default::default() },
            ExperimentConfig { damping: 0.0, ..Default::default() },
            ExperimentConfig { quadrature: "simpson".into(), ..Default::default() },
        ] {
            let err = cfg.resolve().unwrap_err();
            assert_eq!(err.exit_code(), crate::error::exit::USAGE, "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("kk = 3", Path::new("mem")).is_err());
        let cfg = ExperimentConfig::from_toml_str("k = 64\nxi = 10", Path::new("mem")).unwrap();
        assert_eq!((cfg.k, cfg.xi), (64, 10.0));
    }
}
