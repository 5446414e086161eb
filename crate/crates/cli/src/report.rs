//! Aggregation across trials, run-level checks and the files a run leaves
//! behind. `run` and `report` share everything here, so re-aggregating saved
//! CSVs reproduces the original report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use ssmamp_core::stats::{amp_state_evolution, StateEvolution};
use ssmamp_core::{replica_chi, ChiMode, EnsembleKind, ReplicaPoint, VSchedule};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::{CliError, Result};
use crate::experiment::{FieldCheckRow, TrajectoryRow, TrialOutcome, TrialRow};
use crate::kv::KvDoc;

pub const TRAJECTORY_CSV: &str = "trajectories.csv";
pub const TRIALS_CSV: &str = "trials.csv";
pub const FIELD_CSV: &str = "field_checks.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const CONFIG_TOML: &str = "config.toml";

/// Relative tolerance of the state-evolution check, widened to three
/// standard errors when sampling noise dominates.
pub const SE_REL_TOL: f64 = 0.05;
pub const SE_STDERR_MULT: f64 = 3.0;
pub const FIELD_VAR_TOL: f64 = 0.05;
pub const FIELD_KURTOSIS_TOL: f64 = 0.15;
pub const TAP_TOL: f64 = 1e-6;

/// How a number was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Measured on simulated instances.
    Empirical,
    /// Produced by a scalar predictor.
    Predicted,
    /// A deterministic function of other recorded values.
    Identity,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Empirical => "empirical",
            Provenance::Predicted => "predicted",
            Provenance::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: usize,
    pub quantity: String,
    pub mean: f64,
    pub stderr: Option<f64>,
    pub n: usize,
    pub provenance: String,
}

/// Everything a run records; the CSV files hold exactly this.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunData {
    pub rows: Vec<TrajectoryRow>,
    pub trials: Vec<TrialRow>,
    pub fields: Vec<FieldCheckRow>,
}

impl RunData {
    pub fn from_outcomes(outcomes: &[TrialOutcome]) -> Self {
        let mut data = RunData::default();
        for o in outcomes {
            data.rows.extend(o.rows.iter().cloned());
            data.trials.push(o.trial.clone());
            data.fields.extend(o.field_checks.iter().cloned());
        }
        data
    }

    pub fn max_t(&self) -> Option<usize> {
        self.rows.iter().map(|r| r.t).max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// `None` when the check does not apply to this run.
    pub passed: Option<bool>,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: Option<bool>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn status(&self) -> &'static str {
        match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "N/A",
        }
    }
}

/// Scalar predictions a run is compared against.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub replica: std::result::Result<ReplicaPoint, String>,
    pub state_evolution: Option<StateEvolution>,
}

impl Predictions {
    pub fn compute(resolved: &Resolved, horizon: Option<usize>) -> Self {
        let replica = replica_chi(&resolved.prior, &resolved.ensemble, &resolved.solver.replica)
            .map_err(|e| e.to_string());
        let state_evolution = match (&resolved.ensemble.kind, horizon) {
            (EnsembleKind::IidGaussian, Some(h)) => {
                amp_state_evolution(&resolved.prior, &resolved.ensemble, h, &resolved.quadrature).ok()
            }
            _ => None,
        };
        Self {
            replica,
            state_evolution,
        }
    }
}

/// Sample mean and standard error (`None` below two samples).
pub fn mean_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn chi_provenance(resolved: &Resolved) -> Provenance {
    match resolved.solver.chi_mode {
        ChiMode::Empirical => Provenance::Empirical,
        ChiMode::Replica => Provenance::Predicted,
    }
}

fn v_provenance(resolved: &Resolved) -> Provenance {
    match resolved.solver.v_schedule {
        VSchedule::Tap => Provenance::Identity,
        VSchedule::Replica => Provenance::Predicted,
    }
}

type Column = (&'static str, fn(&TrajectoryRow) -> Option<f64>);

const COLUMNS: [Column; 9] = [
    ("mse", |r| r.mse),
    ("chi", |r| Some(r.chi)),
    ("v", |r| Some(r.v)),
    ("g_mem", |r| Some(r.g_mem)),
    ("zeta", |r| Some(r.zeta)),
    ("sigma_x_pred", |r| r.sigma_x_pred),
    ("c_theta_tt_pred", |r| r.c_theta_tt_pred),
    ("field_var_emp", |r| Some(r.field_var_emp)),
    ("tap_r1", |r| r.tap_r1),
];

fn column_provenance(name: &str, resolved: &Resolved) -> Provenance {
    match name {
        "mse" | "field_var_emp" | "tap_r1" => Provenance::Empirical,
        "chi" => chi_provenance(resolved),
        "v" => v_provenance(resolved),
        "g_mem" | "zeta" => Provenance::Identity,
        _ => Provenance::Predicted,
    }
}

/// Per-iteration means over trials, followed by state-evolution values when
/// available. Trials that stopped early contribute to fewer rows.
pub fn summarize(data: &RunData, resolved: &Resolved, pred: &Predictions) -> Vec<SummaryRow> {
    let mut by_t: BTreeMap<usize, Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in &data.rows {
        by_t.entry(r.t).or_default().push(r);
    }
    let mut out = Vec::new();
    for (&t, rows) in &by_t {
        for (name, get) in COLUMNS {
            let xs: Vec<f64> = rows.iter().filter_map(|r| get(r)).filter(|x| x.is_finite()).collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, stderr) = mean_stderr(&xs);
            out.push(SummaryRow {
                t,
                quantity: name.into(),
                mean,
                stderr,
                n: xs.len(),
                provenance: column_provenance(name, resolved).name().into(),
            });
        }
    }
    if let Some(se) = &pred.state_evolution {
        for t in 0..se.mse.len() {
            for (name, value) in [
                ("se_mse", se.mse[t]),
                ("se_chi", se.chi[t]),
                ("se_v", se.v[t]),
                ("se_c_theta", se.c_theta[t]),
            ] {
                out.push(SummaryRow {
                    t,
                    quantity: name.into(),
                    mean: value,
                    stderr: None,
                    n: 1,
                    provenance: Provenance::Predicted.name().into(),
                });
            }
        }
    }
    out
}

/// `|mean - se| <= max(5% se, 3 stderr)` for `t <= horizon`.
pub fn state_evolution_check(data: &RunData, se: &StateEvolution, horizon: usize) -> CheckOutcome {
    let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in data.rows.iter().filter(|r| r.t <= horizon) {
        if let Some(m) = r.mse.filter(|m| m.is_finite()) {
            by_t.entry(r.t).or_default().push(m);
        }
    }
    if by_t.is_empty() {
        return CheckOutcome::new("state_evolution", None, "no iterations with a known truth");
    }
    let mut worst = (0.0f64, 0usize);
    let mut failures = Vec::new();
    for (t, xs) in &by_t {
        let Some(&want) = se.mse.get(*t) else { continue };
        let (mean, stderr) = mean_stderr(xs);
        let allowed = (SE_REL_TOL * want).max(SE_STDERR_MULT * stderr.unwrap_or(0.0));
        let ratio = (mean - want).abs() / allowed;
        if ratio > worst.0 {
            worst = (ratio, *t);
        }
        if !(ratio <= 1.0) {
            failures.push(format!("t={t}: mean {mean:.4e} vs {want:.4e}"));
        }
    }
    let detail = format!(
        "t<={horizon}, worst |mean-se|/allowed = {:.3} at t={}{}",
        worst.0,
        worst.1,
        if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
    );
    CheckOutcome::new("state_evolution", Some(failures.is_empty()), detail)
}

/// Field variance and excess kurtosis per checked iteration, averaged over trials.
pub fn field_checks(data: &RunData) -> Vec<CheckOutcome> {
    let mut by_label: BTreeMap<&str, Vec<&FieldCheckRow>> = BTreeMap::new();
    for f in &data.fields {
        by_label.entry(f.label.as_str()).or_default().push(f);
    }
    let mut out = Vec::new();
    for (label, rows) in by_label {
        let gaps: Vec<f64> = rows.iter().map(|f| f.variance_gap).collect();
        let kurt: Vec<f64> = rows.iter().map(|f| f.excess_kurtosis).collect();
        let (gap, _) = mean_stderr(&gaps);
        let (k, _) = mean_stderr(&kurt);
        out.push(CheckOutcome::new(
            format!("field_variance[{label}]"),
            Some(gap.abs() <= FIELD_VAR_TOL),
            format!("mean relative gap {gap:+.4} over {} trials (tol {FIELD_VAR_TOL})", rows.len()),
        ));
        out.push(CheckOutcome::new(
            format!("field_kurtosis[{label}]"),
            Some(k.abs() < FIELD_KURTOSIS_TOL),
            format!("mean excess kurtosis {k:+.4} (tol {FIELD_KURTOSIS_TOL})"),
        ));
    }
    out
}

pub fn tap_check(data: &RunData) -> CheckOutcome {
    let converged: Vec<&TrialRow> = data.trials.iter().filter(|t| t.converged).collect();
    if converged.is_empty() {
        return CheckOutcome::new("tap_fixed_point", None, "no trial converged");
    }
    let worst = converged
        .iter()
        .map(|t| t.final_tap_r1.unwrap_or(f64::NAN))
        .fold(0.0f64, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
    CheckOutcome::new(
        "tap_fixed_point",
        Some(worst < TAP_TOL),
        format!("max r1 over {} converged trials = {worst:.3e} (tol {TAP_TOL:e})", converged.len()),
    )
}

pub fn evaluate_checks(data: &RunData, cfg: &ExperimentConfig, pred: &Predictions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    match &pred.state_evolution {
        Some(se) => out.push(state_evolution_check(data, se, cfg.check_horizon)),
        None => out.push(CheckOutcome::new(
            "state_evolution",
            None,
            "state evolution is only available for the iid Gaussian ensemble",
        )),
    }
    out.extend(field_checks(data));
    out.push(tap_check(data));
    let flagged: Vec<String> = data
        .trials
        .iter()
        .filter(|t| t.flagged())
        .map(|t| format!("trial {} ({}: {})", t.trial, t.stop, t.detail))
        .collect();
    out.push(CheckOutcome::new(
        "divergence",
        None,
        if flagged.is_empty() { "none".to_string() } else { flagged.join("; ") },
    ));
    out
}

pub fn all_passed(checks: &[CheckOutcome]) -> bool {
    checks.iter().all(|c| c.passed != Some(false))
}

fn tagged(x: f64, p: Provenance) -> String {
    format!("{x:.10e} [{}]", p.name())
}

pub fn build_report(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    data: &RunData,
    pred: &Predictions,
    checks: &[CheckOutcome],
) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("tool", concat!("ssmamp ", env!("CARGO_PKG_VERSION")));
    doc.push("ensemble", resolved.ensemble.kind.name());
    doc.push("alpha", cfg.alpha);
    doc.push("xi", cfg.xi);
    doc.push("k", cfg.k);
    doc.push("n", resolved.n_rows);
    doc.push("prior", resolved.prior);
    doc.push("path", resolved.solver.path.name());
    doc.push("chi_mode", resolved.solver.chi_mode.name());
    doc.push("v_schedule", resolved.solver.v_schedule.name());
    doc.push("max_iters", cfg.max_iters);
    doc.push("tol", cfg.tol);
    doc.push("trials", cfg.trials);
    doc.push("master_seed", cfg.seed);
    doc.push("seed_rule", crate::instances::SEED_RULE);
    if let Some(input) = &cfg.input {
        doc.push("input", input.display());
    }

    doc.section("replica point");
    match &pred.replica {
        Ok(rp) => {
            doc.push("replica.chi", tagged(rp.chi, Provenance::Predicted));
            doc.push("replica.v", tagged(rp.v, Provenance::Predicted));
            doc.push("replica.iterations", rp.iterations);
        }
        Err(e) => doc.push("replica.error", e),
    }

    doc.section("trials");
    for t in &data.trials {
        doc.push(
            format!("trial.{}", t.trial),
            format!(
                "seed={} path={} stop={} iterations={} damped={}",
                t.seed, t.path, t.stop, t.iterations, t.damped
            ),
        );
        if let Some(m) = t.final_mse {
            doc.push(format!("trial.{}.final_mse", t.trial), tagged(m, Provenance::Empirical));
        }
        if let Some(r) = t.final_tap_r1 {
            doc.push(format!("trial.{}.final_tap_r1", t.trial), tagged(r, Provenance::Empirical));
        }
    }

    doc.section("final iteration (mean over trials)");
    let finals: Vec<&TrajectoryRow> = data
        .trials
        .iter()
        .filter_map(|tr| data.rows.iter().filter(|r| r.trial == tr.trial).max_by_key(|r| r.t))
        .collect();
    if !finals.is_empty() {
        for (name, get) in COLUMNS {
            let xs: Vec<f64> = finals.iter().filter_map(|r| get(r)).filter(|x| x.is_finite()).collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, stderr) = mean_stderr(&xs);
            let p = column_provenance(name, resolved);
            doc.push(format!("final.{name}"), tagged(mean, p));
            if let Some(s) = stderr {
                doc.push(format!("final.{name}.stderr"), tagged(s, p));
            }
        }
    }

    doc.section("checks");
    for c in checks {
        doc.push(format!("check.{}", c.name), format!("{} ({})", c.status(), c.detail));
    }
    doc.push("checks.passed", all_passed(checks));
    doc
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::csv(path, e))
}

/// What a finished aggregation produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub checks: Vec<CheckOutcome>,
    pub report: KvDoc,
    pub written: Vec<PathBuf>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }
}

/// Aggregates `data` and writes the summary and report; with `raw` the
/// per-trial CSVs and the configuration are written as well.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    data: &RunData,
    raw: bool,
) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let pred = Predictions::compute(resolved, data.max_t());
    let checks = evaluate_checks(data, cfg, &pred);
    let report = build_report(cfg, resolved, data, &pred, &checks);
    let mut written = Vec::new();
    if raw {
        let p = dir.join(CONFIG_TOML);
        std::fs::write(&p, cfg.to_toml()).map_err(|e| CliError::io(&p, e))?;
        written.push(p);
    }
    if cfg.writes("csv") {
        if raw {
            let p = dir.join(TRAJECTORY_CSV);
            write_csv(&p, &data.rows)?;
            written.push(p);
            let p = dir.join(TRIALS_CSV);
            write_csv(&p, &data.trials)?;
            written.push(p);
            let p = dir.join(FIELD_CSV);
            write_csv(&p, &data.fields)?;
            written.push(p);
        }
        let p = dir.join(SUMMARY_CSV);
        write_csv(&p, &summarize(data, resolved, &pred))?;
        written.push(p);
    }
    if cfg.writes("txt") {
        let p = dir.join(REPORT_TXT);
        report.write(&p)?;
        written.push(p);
    }
    Ok(RunSummary {
        checks,
        report,
        written,
    })
}

/// Reads the configuration and per-trial CSVs of a finished run.
pub fn read_run(dir: &Path) -> Result<(ExperimentConfig, RunData)> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_TOML))?;
    let rows_path = dir.join(TRAJECTORY_CSV);
    if !rows_path.exists() {
        return Err(CliError::Usage(format!(
            "{} not found; `report` needs a run written with the csv format",
            rows_path.display()
        )));
    }
    let data = RunData {
        rows: read_csv(&rows_path)?,
        trials: read_csv(&dir.join(TRIALS_CSV))?,
        fields: read_csv(&dir.join(FIELD_CSV))?,
    };
    Ok((cfg, data))
}
