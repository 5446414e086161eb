//! Monte Carlo trials: one solver run per instance, flattened into CSV rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssmamp_core::stats::replica_field_check;
use ssmamp_core::{run, FieldStats, ProblemInstance, Trajectory};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::Result;
use crate::instances::{trial_seed, LoadedInstance};

/// One iteration of one trial. Column order is the trajectory CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub trial: usize,
    pub mse: Option<f64>,
    pub chi: f64,
    pub v: f64,
    pub g_mem: f64,
    pub zeta: f64,
    pub sigma_x_pred: Option<f64>,
    pub c_theta_tt_pred: Option<f64>,
    pub field_var_emp: f64,
    pub tap_r1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub path: String,
    pub stop: String,
    pub detail: String,
    pub iterations: usize,
    pub converged: bool,
    pub damped: bool,
    pub final_mse: Option<f64>,
    pub final_tap_r1: Option<f64>,
    pub final_step: Option<f64>,
}

impl TrialRow {
    /// Runs that produced non-finite values or could not take a step.
    pub fn flagged(&self) -> bool {
        matches!(self.stop.as_str(), "diverged" | "step_error")
    }
}

/// Gaussianity of `psi(t) - sigma_x(t) x` for one trial and iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCheckRow {
    pub trial: usize,
    pub t: usize,
    /// `t=<n>` for a requested iteration, `final` for the last one.
    pub label: String,
    pub samples: usize,
    pub sigma_x: f64,
    pub variance: f64,
    pub predicted_variance: f64,
    pub variance_gap: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: TrialRow,
    pub rows: Vec<TrajectoryRow>,
    pub field_checks: Vec<FieldCheckRow>,
    pub trajectory: Trajectory,
    /// Predictions driven by this trial's own `chi` and `v` sequences.
    pub predictions: Option<FieldStats>,
}

pub fn run_trial(inst: &ProblemInstance, trial: usize, seed: u64, resolved: &Resolved) -> Result<TrialOutcome> {
    let traj = run(inst, &resolved.prior, &resolved.ensemble, &resolved.solver)?;
    let predictions = if traj.records.is_empty() {
        None
    } else {
        FieldStats::predict(&traj.chi(), &traj.v(), &resolved.ensemble, None).ok()
    };
    let rows = traj
        .records
        .iter()
        .map(|rec| TrajectoryRow {
            t: rec.t,
            trial,
            mse: rec.mse,
            chi: rec.chi,
            v: rec.v,
            g_mem: rec.g_mem,
            zeta: rec.zeta,
            sigma_x_pred: predictions.as_ref().map(|p| p.sigma_x[rec.t]),
            c_theta_tt_pred: predictions.as_ref().map(|p| p.c_theta_diag[rec.t]),
            field_var_emp: rec.field_var,
            tap_r1: rec.tap_r1,
        })
        .collect();

    let mut field_checks = Vec::new();
    if let (Some(x), Some(pred)) = (inst.x_true.as_deref(), predictions.as_ref()) {
        let mut targets: Vec<(usize, String, &[f64])> = Vec::new();
        for &t in &resolved.solver.capture_fields {
            if let Some(psi) = traj.field_at(t) {
                targets.push((t, format!("t={t}"), psi));
            }
        }
        if let (Some(psi), Some(last)) = (traj.final_field.as_deref(), traj.records.last()) {
            targets.push((last.t, "final".into(), psi));
        }
        for (t, label, psi) in targets {
            let sigma_x = traj.records[t].sigma_x;
            let c = pred.c_theta_diag[t];
            // A non-positive prediction still gets a row, with a NaN gap that fails the check.
            let valid = c > 0.0 && c.is_finite();
            if let Ok(fc) = replica_field_check(psi, Some(x), sigma_x, if valid { c } else { 1.0 }) {
                field_checks.push(FieldCheckRow {
                    trial,
                    t,
                    label,
                    samples: fc.samples,
                    sigma_x,
                    variance: fc.variance,
                    predicted_variance: c,
                    variance_gap: if valid { fc.variance_gap } else { f64::NAN },
                    skewness: fc.skewness,
                    excess_kurtosis: fc.excess_kurtosis,
                    ks_distance: if valid { fc.ks_distance } else { f64::NAN },
                });
            }
        }
    }

    let last = traj.records.last();
    let detail = match &traj.stop {
        ssmamp_core::StopReason::Diverged(m) | ssmamp_core::StopReason::StepError(m) => m.clone(),
        _ => String::new(),
    };
    let trial_row = TrialRow {
        trial,
        seed,
        path: traj.path.name().into(),
        stop: traj.stop.name().into(),
        detail,
        iterations: traj.iterations(),
        converged: traj.converged(),
        damped: traj.damped,
        final_mse: last.and_then(|r| r.mse),
        final_tap_r1: last.and_then(|r| r.tap_r1),
        final_step: last.and_then(|r| r.step_change),
    };
    Ok(TrialOutcome {
        trial: trial_row,
        rows,
        field_checks,
        trajectory: traj,
        predictions,
    })
}

/// Runs every trial on the current rayon pool. Instances are synthesized
/// from the derived trial seeds unless `loaded` supplies them. Results are
/// sorted by trial index, so output does not depend on scheduling.
pub fn run_trials(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    loaded: Option<Vec<LoadedInstance>>,
) -> Result<Vec<TrialOutcome>> {
    let mut out: Vec<TrialOutcome> = match loaded {
        Some(list) => list
            .into_par_iter()
            .map(|l| run_trial(&l.instance, l.trial, l.seed, resolved))
            .collect::<Result<_>>()?,
        None => (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = trial_seed(cfg.seed, trial);
                let inst = ProblemInstance::synthesize(&resolved.ensemble, &resolved.prior, cfg.k, seed)?;
                run_trial(&inst, trial, seed, resolved)
            })
            .collect::<Result<_>>()?,
    };
    out.sort_by_key(|o| o.trial.trial);
    Ok(out)
}
