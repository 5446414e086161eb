//! The single-step memory iteration and its two specialisations.
//!
//! All three paths share the outer loop: at iteration `t` the field `psi(t)` is
//! formed from `gamma(t) = h + J m(t)` and the path's memory, the estimate is
//! updated as `m(t+1) = eta_{v(t)}(psi(t))`, and `chi(t+1)` is taken from the
//! posterior variances of the new field.

mod field;
mod tap;

pub use tap::{tap_residual, TapResidual};

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::instance::ProblemInstance;
use crate::prior::{replica_chi, Prior, ReplicaOptions, ReplicaPoint};
use crate::rmt::{EnsembleKind, EnsembleSpec};
use crate::logreal::LogReal;
use crate::stats::memory_weights;

/// Lower clip for `chi(t)`; `u(t)` divides by it.
pub const CHI_FLOOR: f64 = 1e-12;
/// Upper clip for `chi(t)` as a multiple of the prior second moment.
pub const CHI_CEILING_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverPath {
    /// Full history of `u(tau)` weighted by `a_{t+1-tau}`.
    Generic,
    /// Two auxiliary fields; row-orthogonal ensemble only.
    Specialized,
    /// Onsager-corrected AMP; iid Gaussian ensemble only.
    Amp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChiMode {
    /// Average posterior variance of the current field.
    Empirical,
    /// The replica fixed point, held constant from `t = 0`.
    Replica,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VSchedule {
    /// `v(t) = xi - R(chi(t))`.
    Tap,
    /// The replica `v`, held constant.
    Replica,
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $ty {
            pub fn name(&self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name $(| $alias)* => Ok($ty::$variant),)+
                    other => Err(invalid(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

named_enum!(SolverPath { Generic => "generic", Specialized => "specialized" | "row_orthogonal", Amp => "amp" });
named_enum!(ChiMode { Empirical => "empirical", Replica => "replica" });
named_enum!(VSchedule { Tap => "tap", Replica => "replica" });

impl SolverPath {
    /// The cheapest exact path for an ensemble.
    pub fn preferred_for(ens: &EnsembleSpec) -> Self {
        match ens.kind {
            EnsembleKind::IidGaussian => SolverPath::Amp,
            EnsembleKind::RowOrthogonal if ens.alpha < 1.0 => SolverPath::Specialized,
            _ => SolverPath::Generic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub path: SolverPath,
    pub max_iters: usize,
    /// Stop once `||m(t+1) - m(t)||_2 / sqrt(K)` falls below this. `None` or a
    /// non-finite value runs the full `max_iters`.
    pub tol: Option<f64>,
    /// `m(t+1) = (1 - d) m(t) + d eta(psi(t))` when set; `d = 1` is undamped.
    pub damping: Option<f64>,
    pub chi_mode: ChiMode,
    pub v_schedule: VSchedule,
    /// Iterations at which `psi(t)` is kept.
    pub capture_fields: Vec<usize>,
    pub capture_final_field: bool,
    /// Keep `m(t)` and `psi(t)` for every iteration.
    pub record_iterates: bool,
    /// Accumulate `C(tau, s) = (1/K) sum_k (m_k(tau) - x_k)(m_k(s) - x_k)`.
    pub track_correlation: bool,
    /// Evaluate the TAP residual of every iterate.
    pub tap_diagnostics: bool,
    /// Used when either `chi_mode` or `v_schedule` asks for the replica point.
    pub replica: ReplicaOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            path: SolverPath::Generic,
            max_iters: 100,
            tol: Some(1e-10),
            damping: None,
            chi_mode: ChiMode::Empirical,
            v_schedule: VSchedule::Tap,
            capture_fields: Vec::new(),
            capture_final_field: false,
            record_iterates: false,
            track_correlation: false,
            tap_diagnostics: true,
            replica: ReplicaOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn with_path(mut self, path: SolverPath) -> Self {
        self.path = path;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: Option<f64>) -> Self {
        self.tol = tol;
        self
    }

    fn stop_tol(&self) -> Option<f64> {
        self.tol.filter(|t| t.is_finite())
    }
}

/// Path-specific memory carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum Memory {
    /// `Q(tau-1) u(tau)` for `tau = 0..t`.
    Generic { history: Vec<Vec<f64>> },
    RowOrthogonal { z1: Vec<f64>, z2: Vec<f64> },
    Amp { z: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: usize,
    pub m_curr: Vec<f64>,
    pub m_prev: Vec<f64>,
    pub memory: Memory,
    /// `psi(t)` once the field of iteration `t` has been formed.
    pub psi: Vec<f64>,
    /// `gamma(t) = h + J m(t)`.
    pub gamma: Vec<f64>,
    pub chi_curr: f64,
    pub chi_prev: f64,
    pub v_curr: f64,
    pub q_curr: f64,
    pub q_prev: f64,
    /// `G(t, t-1)`.
    pub g_mem: f64,
    pub zeta_curr: f64,
    pub zeta_prev: f64,
    pub chi_history: Vec<f64>,
    pub r_history: Vec<f64>,
}

impl SolverState {
    /// `m(0) = 0`, `m(-1) = 0`, zero memory fields, `G(0,-1) = 0`, `Q(-1) = 1`.
    pub fn initial(k: usize, chi0: f64, path: SolverPath) -> Self {
        let memory = match path {
            SolverPath::Generic => Memory::Generic { history: Vec::new() },
            SolverPath::Specialized => Memory::RowOrthogonal {
                z1: vec![0.0; k],
                z2: vec![0.0; k],
            },
            SolverPath::Amp => Memory::Amp { z: vec![0.0; k] },
        };
        Self {
            t: 0,
            m_curr: vec![0.0; k],
            m_prev: vec![0.0; k],
            memory,
            psi: Vec::new(),
            gamma: Vec::new(),
            chi_curr: chi0,
            chi_prev: chi0,
            v_curr: f64::NAN,
            q_curr: f64::NAN,
            q_prev: 1.0,
            g_mem: 0.0,
            zeta_curr: f64::NAN,
            zeta_prev: 0.0,
            chi_history: Vec::new(),
            r_history: Vec::new(),
        }
    }
}

/// `G(t, t-1) = (chi(t) / chi(t-1)) R(chi(t-1))`; zero when there is no previous step.
pub fn memory_coefficient(chi_curr: f64, chi_prev: Option<f64>, ens: &EnsembleSpec) -> Result<f64> {
    match chi_prev {
        None => Ok(0.0),
        Some(prev) if prev > 0.0 && prev.is_finite() => {
            Ok(chi_curr / prev * ens.r_transform(prev)?)
        }
        Some(prev) => Err(invalid(format!("chi(t-1) must be positive, got {prev}"))),
    }
}

fn clip_chi(chi: f64, prior: &Prior) -> (f64, bool) {
    let ceiling = CHI_CEILING_FACTOR * prior.second_moment();
    if chi < CHI_FLOOR || chi.is_nan() {
        (CHI_FLOOR, true)
    } else {
        (chi.min(ceiling), false)
    }
}

/// Average posterior variance of `psi` at precision `v`, clipped to
/// `[CHI_FLOOR, 10 <x^2>]`.
pub fn chi_update(prior: &Prior, psi: &[f64], v: f64) -> Result<f64> {
    if psi.is_empty() {
        return Err(invalid("empty field"));
    }
    let mut acc = 0.0;
    for &p in psi {
        acc += prior.denoise(p, v)?.variance;
    }
    Ok(clip_chi(acc / psi.len() as f64, prior).0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Converged,
    MaxIters,
    /// A non-finite value appeared in the field or the estimate.
    Diverged(String),
    /// A step could not be evaluated (e.g. `v(t) <= 0`).
    StepError(String),
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxIters => "max_iters",
            StopReason::Diverged(_) => "diverged",
            StopReason::StepError(_) => "step_error",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Diverged(m) | StopReason::StepError(m) => write!(f, "{}: {m}", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Per-iteration diagnostics. Entry `t` describes `m(t)` and `psi(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    /// `||m(t) - x||^2 / K` when the truth is known.
    pub mse: Option<f64>,
    pub chi: f64,
    pub v: f64,
    pub g_mem: f64,
    pub q: f64,
    pub zeta: f64,
    /// `(zeta(t) xi - zeta(t-1) R(chi(t))) / v(t)` from this run's own sequences.
    pub sigma_x: f64,
    /// Mean of `psi(t) - sigma_x(t) x` (of `psi(t)` without a known truth).
    pub field_mean: f64,
    /// Variance of the same quantity.
    pub field_var: f64,
    pub tap_r1: Option<f64>,
    pub tap_r2: Option<f64>,
    /// `||m(t) - m(t-1)||_2 / sqrt(K)`; absent at `t = 0`.
    pub step_change: Option<f64>,
    /// `chi(t)` hit the lower clip.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub path: SolverPath,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub damped: bool,
    pub replica: Option<ReplicaPoint>,
    /// The last estimate reached.
    pub estimate: Vec<f64>,
    pub captured_fields: Vec<(usize, Vec<f64>)>,
    pub final_field: Option<Vec<f64>>,
    pub iterates: Option<Vec<Vec<f64>>>,
    pub fields: Option<Vec<Vec<f64>>>,
    pub correlation: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    /// Number of estimate updates performed.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn chi(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.chi).collect()
    }

    pub fn v(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v).collect()
    }

    pub fn field_at(&self, t: usize) -> Option<&[f64]> {
        self.captured_fields
            .iter()
            .find(|(s, _)| *s == t)
            .map(|(_, f)| f.as_slice())
    }
}

/// A configured run over one instance.
pub struct Solver<'a> {
    inst: &'a ProblemInstance,
    prior: &'a Prior,
    ens: &'a EnsembleSpec,
    opts: &'a SolverOptions,
    a: Vec<LogReal>,
    replica: Option<ReplicaPoint>,
}

impl<'a> Solver<'a> {
    pub fn new(
        inst: &'a ProblemInstance,
        prior: &'a Prior,
        ens: &'a EnsembleSpec,
        opts: &'a SolverOptions,
    ) -> Result<Self> {
        if inst.xi != ens.xi {
            return Err(invalid(format!(
                "instance noise precision {} differs from the ensemble's {}",
                inst.xi, ens.xi
            )));
        }
        match opts.path {
            SolverPath::Amp => {
                if ens.kind != EnsembleKind::IidGaussian {
                    return Err(invalid("the AMP path needs the iid Gaussian ensemble"));
                }
                if opts.v_schedule != VSchedule::Tap {
                    return Err(invalid("the AMP path needs v(t) = xi - R(chi(t))"));
                }
            }
            SolverPath::Specialized => {
                if ens.kind != EnsembleKind::RowOrthogonal {
                    return Err(invalid("the specialised path needs the row-orthogonal ensemble"));
                }
                if ens.xi_pair().1 == 0.0 {
                    return Err(Error::Degenerate(
                        "xi_2 = 0 (alpha = 1); use the generic path".into(),
                    ));
                }
            }
            SolverPath::Generic => {}
        }
        if let Some(d) = opts.damping {
            if !(d > 0.0 && d <= 1.0) {
                return Err(invalid(format!("damping must lie in (0, 1], got {d}")));
            }
        }
        if let Some(t) = opts.tol {
            if !(t > 0.0) {
                return Err(invalid(format!("tolerance must be positive, got {t}")));
            }
        }
        let a = ens.memory_coeffs(opts.max_iters + 1)?;
        let replica = if opts.chi_mode == ChiMode::Replica || opts.v_schedule == VSchedule::Replica {
            Some(replica_chi(prior, ens, &opts.replica)?)
        } else {
            None
        };
        Ok(Self {
            inst,
            prior,
            ens,
            opts,
            a,
            replica,
        })
    }

    pub fn initial_state(&self) -> SolverState {
        let chi0 = match (self.opts.chi_mode, self.replica) {
            (ChiMode::Replica, Some(p)) => p.chi,
            _ => self.prior.second_moment(),
        };
        SolverState::initial(self.inst.n_cols(), chi0, self.opts.path)
    }

    /// Forms `psi(t)` from `m(t)`, `m(t-1)` and the memory.
    pub fn form_field(&self, st: &mut SolverState) -> Result<()> {
        let r = self.ens.r_transform(st.chi_curr)?;
        let v = match (self.opts.v_schedule, self.replica) {
            (VSchedule::Replica, Some(p)) => p.v,
            _ => self.ens.xi - r,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("v({}) = {v} is not positive", st.t)));
        }
        st.v_curr = v;
        st.q_curr = st.q_prev * r;
        st.chi_history.push(st.chi_curr);
        st.r_history.push(r);
        match self.opts.path {
            SolverPath::Amp => {
                let residual = self.inst.residual_correlation(&st.m_curr);
                let xi = self.inst.xi;
                st.gamma = residual
                    .iter()
                    .zip(&st.m_curr)
                    .map(|(rk, m)| xi * (rk + m))
                    .collect();
                field::amp(st, &residual, xi)?;
            }
            SolverPath::Generic => {
                st.gamma = self.inst.gamma(&st.m_curr);
                field::generic(st, &self.a)?;
            }
            SolverPath::Specialized => {
                st.gamma = self.inst.gamma(&st.m_curr);
                field::row_orthogonal(st, self.ens)?;
            }
        }
        st.zeta_curr = memory_weights(&self.a, &st.r_history)
            .iter()
            .zip(&st.chi_history)
            .map(|(w, c)| w / c)
            .sum();
        Ok(())
    }

    /// `m(t+1) = eta_{v(t)}(psi(t))`, `chi(t+1)`, `G(t+1, t)`; advances `t`.
    /// Returns the step size and whether `chi(t+1)` was clipped at the floor.
    pub fn advance(&self, st: &mut SolverState) -> Result<(f64, bool)> {
        let v = st.v_curr;
        let k = st.m_curr.len();
        let mut next = Vec::with_capacity(k);
        let mut var_sum = 0.0;
        for &p in &st.psi {
            let post = self.prior.posterior(p, v);
            next.push(post.mean);
            var_sum += post.variance;
        }
        if let Some(d) = self.opts.damping {
            for (n, m) in next.iter_mut().zip(&st.m_curr) {
                *n = (1.0 - d) * m + d * *n;
            }
        }
        let (chi_next, degenerate) = match (self.opts.chi_mode, self.replica) {
            (ChiMode::Replica, Some(p)) => (p.chi, false),
            _ => clip_chi(var_sum / k as f64, self.prior),
        };
        let step = (next
            .iter()
            .zip(&st.m_curr)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / k as f64)
            .sqrt();
        if !step.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence(format!("estimate at t = {}", st.t + 1)));
        }
        let r = *st.r_history.last().expect("field formed before advancing");
        st.g_mem = chi_next / st.chi_curr * r;
        st.chi_prev = st.chi_curr;
        st.chi_curr = chi_next;
        st.m_prev = std::mem::replace(&mut st.m_curr, next);
        st.q_prev = st.q_curr;
        st.zeta_prev = st.zeta_curr;
        st.t += 1;
        Ok((step, degenerate))
    }

    /// One full iteration: field then estimate.
    pub fn step(&self, st: &mut SolverState) -> Result<(f64, bool)> {
        self.form_field(st)?;
        self.advance(st)
    }

    fn record(&self, st: &SolverState, step: Option<f64>, degenerate: bool) -> Result<IterationRecord> {
        let r = *st.r_history.last().expect("field formed before recording");
        let sigma_x = (st.zeta_curr * self.ens.xi - st.zeta_prev * r) / st.v_curr;
        let k = st.psi.len() as f64;
        let theta: Vec<f64> = match &self.inst.x_true {
            Some(x) => st.psi.iter().zip(x).map(|(p, x)| p - sigma_x * x).collect(),
            None => st.psi.clone(),
        };
        let mean = theta.iter().sum::<f64>() / k;
        let var = theta.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / k;
        let tap = if self.opts.tap_diagnostics {
            Some(tap::residual_from_gamma(
                &st.gamma,
                &st.m_curr,
                st.chi_curr,
                self.prior,
                self.ens,
            )?)
        } else {
            None
        };
        Ok(IterationRecord {
            t: st.t,
            mse: self.inst.mse(&st.m_curr),
            chi: st.chi_curr,
            v: st.v_curr,
            g_mem: st.g_mem,
            q: st.q_curr,
            zeta: st.zeta_curr,
            sigma_x,
            field_mean: mean,
            field_var: var,
            tap_r1: tap.map(|t| t.r1),
            tap_r2: tap.map(|t| t.r2),
            step_change: step,
            degenerate,
        })
    }

    pub fn run(&self) -> Trajectory {
        let opts = self.opts;
        let mut st = self.initial_state();
        let mut traj = Trajectory {
            path: opts.path,
            records: Vec::new(),
            stop: StopReason::MaxIters,
            damped: opts.damping.is_some_and(|d| d < 1.0),
            replica: self.replica,
            estimate: Vec::new(),
            captured_fields: Vec::new(),
            final_field: None,
            iterates: opts.record_iterates.then(Vec::new),
            fields: opts.record_iterates.then(Vec::new),
            correlation: None,
        };
        let truth = self.inst.x_true.as_deref();
        let mut errors: Vec<Vec<f64>> = Vec::new();
        let mut last_step = None;
        let mut degenerate = false;
        let mut converged = false;
        loop {
            if let Err(e) = self.form_field(&mut st) {
                traj.stop = StopReason::StepError(e.to_string());
                break;
            }
            if st.psi.iter().any(|p| !p.is_finite()) {
                traj.stop = StopReason::Diverged(format!("field at t = {}", st.t));
                break;
            }
            match self.record(&st, last_step, degenerate) {
                Ok(rec) => traj.records.push(rec),
                Err(e) => {
                    traj.stop = StopReason::StepError(e.to_string());
                    break;
                }
            }
            if opts.capture_fields.contains(&st.t) {
                traj.captured_fields.push((st.t, st.psi.clone()));
            }
            if let (Some(it), Some(f)) = (traj.iterates.as_mut(), traj.fields.as_mut()) {
                it.push(st.m_curr.clone());
                f.push(st.psi.clone());
            }
            if opts.track_correlation {
                if let Some(x) = truth {
                    errors.push(st.m_curr.iter().zip(x).map(|(m, x)| m - x).collect());
                }
            }
            if converged {
                traj.stop = StopReason::Converged;
                break;
            }
            if st.t >= opts.max_iters {
                traj.stop = StopReason::MaxIters;
                break;
            }
            match self.advance(&mut st) {
                Ok((step, deg)) => {
                    last_step = Some(step);
                    degenerate = deg;
                    converged = opts.stop_tol().is_some_and(|tol| step < tol);
                }
                Err(e) => {
                    traj.stop = match e {
                        Error::Divergence(m) => StopReason::Diverged(m),
                        other => StopReason::StepError(other.to_string()),
                    };
                    break;
                }
            }
        }
        if opts.capture_final_field && !st.psi.is_empty() {
            traj.final_field = Some(st.psi.clone());
        }
        if !errors.is_empty() {
            let k = self.inst.n_cols() as f64;
            let n = errors.len();
            let mut c = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let v = errors[i].iter().zip(&errors[j]).map(|(a, b)| a * b).sum::<f64>() / k;
                    c[i][j] = v;
                    c[j][i] = v;
                }
            }
            traj.correlation = Some(c);
        }
        traj.estimate = st.m_curr;
        traj
    }
}

/// Runs the configured iteration. Configuration errors are returned; errors
/// inside the iteration end the run and are reported in `Trajectory::stop`.
pub fn run(
    inst: &ProblemInstance,
    prior: &Prior,
    ens: &EnsembleSpec,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    Ok(Solver::new(inst, prior, ens, opts)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(ens: &EnsembleSpec, k: usize, seed: u64) -> (ProblemInstance, Prior) {
        let prior = Prior::bernoulli_gaussian(0.1).unwrap();
        (ProblemInstance::synthesize(ens, &prior, k, seed).unwrap(), prior)
    }

    #[test]
    fn memory_coefficient_examples() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        assert_eq!(memory_coefficient(0.3, None, &ens).unwrap(), 0.0);
        let r = ens.r_transform(0.4).unwrap();
        assert!((memory_coefficient(0.4, Some(0.4), &ens).unwrap() - r).abs() < 1e-15);
        let g = memory_coefficient(0.2, Some(0.4), &ens).unwrap();
        assert!((g - 0.5 * 0.4 / 0.9).abs() < 1e-15);
        assert!(memory_coefficient(0.2, Some(0.0), &ens).is_err());
    }

    #[test]
    fn chi_update_gaussian_prior() {
        let prior = Prior::gaussian(1.0).unwrap();
        let psi = [-3.0, 0.0, 0.4, 7.0];
        assert!((chi_update(&prior, &psi, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let bg = Prior::bernoulli_gaussian(0.2).unwrap();
        assert!((chi_update(&bg, &psi, 1e-12).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn first_generic_field_matches_closed_form() {
        let ens = EnsembleSpec::row_orthogonal(0.5, 4.0).unwrap();
        let (inst, prior) = setup(&ens, 64, 3);
        let opts = SolverOptions::default();
        let solver = Solver::new(&inst, &prior, &ens, &opts).unwrap();
        let mut st = solver.initial_state();
        solver.form_field(&mut st).unwrap();
        let chi0 = prior.second_moment();
        let r = ens.r_transform(chi0).unwrap();
        let v = ens.xi - r;
        let a1 = ens.r_inverse_coeffs(1).unwrap()[0];
        for (p, h) in st.psi.iter().zip(inst.h()) {
            let want = r * a1 * h / (v * chi0);
            assert!((p - want).abs() < 1e-12 * want.abs().max(1.0));
        }
        assert_eq!(st.q_curr, r);
    }

    #[test]
    fn amp_first_field_is_matched_filter() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 10.0).unwrap();
        let (inst, prior) = setup(&ens, 64, 4);
        let opts = SolverOptions::default().with_path(SolverPath::Amp);
        let solver = Solver::new(&inst, &prior, &ens, &opts).unwrap();
        let mut st = solver.initial_state();
        solver.form_field(&mut st).unwrap();
        let aty = inst.a.matvec_t(&inst.y);
        assert_eq!(st.psi, aty);
    }

    #[test]
    fn specialised_fields_start_from_h() {
        let ens = EnsembleSpec::row_orthogonal(0.5, 4.0).unwrap();
        let (inst, prior) = setup(&ens, 64, 5);
        let opts = SolverOptions::default().with_path(SolverPath::Specialized);
        let solver = Solver::new(&inst, &prior, &ens, &opts).unwrap();
        let mut st = solver.initial_state();
        solver.form_field(&mut st).unwrap();
        let (xi1, xi2) = ens.xi_pair();
        let Memory::RowOrthogonal { z1, z2 } = &st.memory else { panic!() };
        for k in 0..64 {
            assert!((z1[k] - inst.h()[k] / xi1).abs() < 1e-14);
            assert!((z2[k] - inst.h()[k] / xi2).abs() < 1e-14);
        }
    }

    #[test]
    fn path_ensemble_pairing_is_checked() {
        let iid = EnsembleSpec::iid_gaussian(0.5, 4.0).unwrap();
        let (inst, prior) = setup(&iid, 32, 1);
        let specialized = SolverOptions::default().with_path(SolverPath::Specialized);
        assert!(Solver::new(&inst, &prior, &iid, &specialized).is_err());
        let mut amp = SolverOptions::default().with_path(SolverPath::Amp);
        amp.v_schedule = VSchedule::Replica;
        assert!(Solver::new(&inst, &prior, &iid, &amp).is_err());
        let row = EnsembleSpec::row_orthogonal(1.0, 4.0).unwrap();
        let (inst1, _) = setup(&row, 32, 1);
        assert!(Solver::new(&inst1, &prior, &row, &specialized).is_err());
    }

    #[test]
    fn infinite_tolerance_runs_every_iteration() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 4.0).unwrap();
        let (inst, prior) = setup(&ens, 64, 2);
        for iters in [0, 1, 7] {
            let opts = SolverOptions::default()
                .with_max_iters(iters)
                .with_tol(Some(f64::INFINITY));
            let traj = run(&inst, &prior, &ens, &opts).unwrap();
            assert_eq!(traj.records.len(), iters + 1);
            assert_eq!(traj.stop, StopReason::MaxIters);
            for (t, r) in traj.records.iter().enumerate() {
                assert_eq!(r.t, t);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let ens = EnsembleSpec::row_orthogonal(0.5, 10.0).unwrap();
        let (inst, prior) = setup(&ens, 128, 9);
        let opts = SolverOptions::default().with_max_iters(15);
        let a = run(&inst, &prior, &ens, &opts).unwrap();
        let b = run(&inst, &prior, &ens, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn damping_is_flagged() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 4.0).unwrap();
        let (inst, prior) = setup(&ens, 64, 2);
        let mut opts = SolverOptions::default().with_max_iters(3);
        opts.damping = Some(0.7);
        assert!(run(&inst, &prior, &ens, &opts).unwrap().damped);
        opts.damping = Some(1.5);
        assert!(run(&inst, &prior, &ens, &opts).is_err());
    }
}
