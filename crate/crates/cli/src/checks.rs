//! Cross-module identity checks run by `validate` and by the acceptance suite.
//!
//! Every check reports the worst deviation it saw next to its tolerance, so a
//! failure names the module, the identity and how far off it was.

use std::fmt;

use ssmamp_core::rmt::b_coefficients_from_inverse;
use ssmamp_core::{
    run, tap_residual, EnsembleKind, EnsembleSpec, Error, Prior, ProblemInstance, SolverOptions, SolverPath,
    StopReason, Trajectory,
};

/// Values of `alpha` and `xi` covered by the calculus checks.
pub const ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];
pub const XIS: [f64; 3] = [1.0, 10.0, 100.0];

pub const COMPOSITION_TOL: f64 = 1e-9;
pub const REVERSION_TOL: f64 = 1e-10;
pub const REVERSION_ORDER: usize = 20;
pub const B_TOL: f64 = 1e-8;
pub const B_ORDER: usize = 10;
pub const AMP_REDUCTION_TOL: f64 = 1e-8;
pub const SPECIALIZATION_TOL: f64 = 1e-6;
pub const TAP_TOL: f64 = 1e-6;
pub const CONVERGENCE_TOL: f64 = 1e-10;
pub const DENOISER_TOL: f64 = 1e-8;
pub const DERIVATIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub identity: String,
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(module: &'static str, identity: impl Into<String>, worst: f64, tol: f64, detail: impl Into<String>) -> Self {
        Self {
            module,
            identity: identity.into(),
            worst,
            tol,
            passed: worst <= tol,
            detail: detail.into(),
        }
    }

    /// A check that could not be evaluated counts as failed.
    fn error(module: &'static str, identity: impl Into<String>, tol: f64, err: impl fmt::Display) -> Self {
        Self {
            module,
            identity: identity.into(),
            worst: f64::INFINITY,
            tol,
            passed: false,
            detail: format!("error: {err}"),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} worst={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.identity,
            self.worst,
            self.tol
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Both named ensembles over the `ALPHAS x XIS` grid.
pub fn named_ensembles() -> Vec<EnsembleSpec> {
    let mut out = Vec::new();
    for &alpha in &ALPHAS {
        for &xi in &XIS {
            out.push(EnsembleSpec::iid_gaussian(alpha, xi).expect("valid grid"));
            out.push(EnsembleSpec::row_orthogonal(alpha, xi).expect("valid grid"));
        }
    }
    out
}

/// `|omega| <= 0.1` in steps of 0.005.
pub fn omega_grid() -> Vec<f64> {
    (0..=40).map(|i| -0.1 + 0.005 * i as f64).collect()
}

fn label(ens: &EnsembleSpec) -> String {
    format!("{}(alpha={}, xi={})", ens.kind.name(), ens.alpha, ens.xi)
}

/// Tracks the largest deviation and where it happened.
#[derive(Default)]
struct Worst {
    value: f64,
    at: String,
    skipped: Vec<String>,
}

impl Worst {
    fn see(&mut self, dev: f64, at: impl FnOnce() -> String) {
        if dev > self.value || dev.is_nan() {
            self.value = if dev.is_nan() { f64::INFINITY } else { dev };
            self.at = at();
        }
    }

    fn detail(&self) -> String {
        let mut s = if self.at.is_empty() { String::new() } else { format!("at {}", self.at) };
        if !self.skipped.is_empty() {
            if !s.is_empty() {
                s.push_str("; ");
            }
            s.push_str(&format!("not applicable: {}", self.skipped.join(", ")));
        }
        s
    }
}

pub fn r_at_origin() -> Check {
    let mut w = Worst::default();
    for ens in named_ensembles() {
        match ens.r_transform(0.0) {
            Ok(r) => w.see(r.abs(), || label(&ens)),
            Err(e) => return Check::error("rmt", "R(0) = 0", 0.0, e),
        }
    }
    Check::new("rmt", "R(0) = 0", w.value, 0.0, w.detail())
}

/// `max |R(sum_n a_n w^n) - w|` over the grid.
pub fn composition_deviation(ens: &EnsembleSpec, a: &[f64]) -> ssmamp_core::Result<f64> {
    let mut worst = 0.0f64;
    for w in omega_grid() {
        // Horner on sum_n a_n w^n
        let inv = a.iter().rev().fold(0.0, |acc, an| (acc + an) * w);
        let back = ens.r_transform(inv)?;
        worst = worst.max((back - w).abs());
    }
    Ok(worst)
}

/// `R(R^{-1}(w)) = w` with coefficients from `coeffs`; degenerate
/// ensembles are skipped and listed.
pub fn composition_with<F>(coeffs: F) -> Check
where
    F: Fn(&EnsembleSpec) -> ssmamp_core::Result<Vec<f64>>,
{
    let identity = "R(R^{-1}(w)) = w for |w| <= 0.1";
    let mut w = Worst::default();
    for ens in named_ensembles() {
        let a = match coeffs(&ens) {
            Ok(a) => a,
            Err(Error::Degenerate(_)) => {
                w.skipped.push(format!("{} (degenerate)", label(&ens)));
                continue;
            }
            Err(e) => return Check::error("rmt", identity, COMPOSITION_TOL, e),
        };
        match composition_deviation(&ens, &a) {
            Ok(d) => w.see(d, || label(&ens)),
            Err(e) => return Check::error("rmt", identity, COMPOSITION_TOL, format!("{}: {e}", label(&ens))),
        }
    }
    Check::new("rmt", identity, w.value, COMPOSITION_TOL, w.detail())
}

pub fn composition() -> Check {
    composition_with(|ens| ens.r_inverse_coeffs(30))
}

/// Closed-form `a_n` against reversion of the cumulant series. Deviations
/// are relative to `max(|a_n|, xi^{-(n+1)})`, the size of the iid term.
pub fn reversion() -> Check {
    let identity = format!("closed-form a_n = series reversion, n <= {REVERSION_ORDER}");
    let mut w = Worst::default();
    for ens in named_ensembles() {
        let closed = match ens.r_inverse_coeffs(REVERSION_ORDER) {
            Ok(a) => a,
            Err(Error::Degenerate(_)) => {
                w.skipped.push(format!("{} (degenerate)", label(&ens)));
                continue;
            }
            Err(e) => return Check::error("rmt", identity, REVERSION_TOL, e),
        };
        let reverted = match ens.r_inverse_coeffs_by_reversion(REVERSION_ORDER) {
            Ok(a) => a,
            Err(e) => return Check::error("rmt", identity, REVERSION_TOL, e),
        };
        for (i, (c, r)) in closed.iter().zip(&reverted).enumerate() {
            let scale = c.abs().max(ens.xi.powi(-(i as i32 + 2)));
            w.see((c - r).abs() / scale, || format!("{} n={}", label(&ens), i + 1));
        }
    }
    Check::new("rmt", identity, w.value, REVERSION_TOL, w.detail())
}

/// Closed-form B coefficients against the bivariate expansion built from the
/// `a_n`. Nonzero entries are compared relatively; entries that vanish in
/// closed form must be below the tolerance times the largest entry.
pub fn b_closed_forms() -> Check {
    let identity = format!("closed-form B coefficients = bivariate expansion, orders <= {B_ORDER}");
    let mut w = Worst::default();
    for ens in named_ensembles() {
        let closed = match ens.b_coefficients(B_ORDER) {
            Ok(b) => b,
            Err(Error::Degenerate(_)) => {
                w.skipped.push(format!("{} (degenerate)", label(&ens)));
                continue;
            }
            Err(e) => return Check::error("rmt", identity, B_TOL, e),
        };
        let numeric = match ens
            .r_inverse_coeffs(2 * B_ORDER - 1)
            .and_then(|a| b_coefficients_from_inverse(&a, B_ORDER))
        {
            Ok(b) => b,
            Err(e) => return Check::error("rmt", identity, B_TOL, e),
        };
        let mut table_scale = 0.0f64;
        for n in 1..=B_ORDER {
            for k in 1..=B_ORDER {
                table_scale = table_scale.max(closed.get(n, k).abs());
            }
        }
        for n in 1..=B_ORDER {
            for k in 1..=B_ORDER {
                let (c, m) = (closed.get_log(n, k), numeric.get(n, k));
                let dev = if c.is_zero() {
                    m.abs() / table_scale
                } else {
                    (c.value() - m).abs() / c.value().abs()
                };
                w.see(dev, || format!("{} ({n},{k})", label(&ens)));
            }
        }
    }
    Check::new("rmt", identity, w.value, B_TOL, w.detail())
}

fn fixed_horizon(path: SolverPath, iters: usize) -> SolverOptions {
    SolverOptions {
        path,
        max_iters: iters,
        tol: None,
        record_iterates: true,
        tap_diagnostics: false,
        ..SolverOptions::default()
    }
}

/// Largest componentwise gap between the estimates and fields of two runs;
/// infinite when they stopped at different iterations.
pub fn max_component_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut worst = 0.0f64;
    let pairs = [(a.iterates.as_ref(), b.iterates.as_ref()), (a.fields.as_ref(), b.fields.as_ref())];
    for (x, y) in pairs {
        let (Some(x), Some(y)) = (x, y) else { return f64::INFINITY };
        if x.len() != y.len() {
            return f64::INFINITY;
        }
        for (u, v) in x.iter().zip(y) {
            for (p, q) in u.iter().zip(v) {
                let d = (p - q).abs();
                worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
            }
        }
    }
    worst
}

fn compare_paths(
    ens: &EnsembleSpec,
    k: usize,
    iters: usize,
    seed: u64,
    paths: (SolverPath, SolverPath),
) -> ssmamp_core::Result<(f64, usize)> {
    let prior = Prior::bernoulli_gaussian(0.1)?;
    let inst = ProblemInstance::synthesize(ens, &prior, k, seed)?;
    let a = run(&inst, &prior, ens, &fixed_horizon(paths.0, iters))?;
    let b = run(&inst, &prior, ens, &fixed_horizon(paths.1, iters))?;
    let steps = a.iterations().min(b.iterations());
    if a.iterations() != iters || b.iterations() != iters {
        return Ok((f64::INFINITY, steps));
    }
    Ok((max_component_gap(&a, &b), steps))
}

/// Generic memory path against plain AMP on iid matrices.
pub fn amp_reduction(k: usize, iters: usize, xis: &[f64]) -> Check {
    let identity = format!("generic path = AMP on iid matrices (K={k}, {iters} iterations)");
    let mut w = Worst::default();
    for &xi in xis {
        let ens = match EnsembleSpec::iid_gaussian(0.5, xi) {
            Ok(e) => e,
            Err(e) => return Check::error("solver", identity, AMP_REDUCTION_TOL, e),
        };
        match compare_paths(&ens, k, iters, 17, (SolverPath::Generic, SolverPath::Amp)) {
            Ok((gap, steps)) => w.see(gap, || format!("{} after {steps} steps", label(&ens))),
            Err(e) => return Check::error("solver", identity, AMP_REDUCTION_TOL, e),
        }
    }
    Check::new("solver", identity, w.value, AMP_REDUCTION_TOL, w.detail())
}

/// Generic memory path against the two-term row-orthogonal recursion.
pub fn specialization(k: usize, iters: usize, cases: &[(f64, f64)]) -> Check {
    let identity = format!("generic path = row-orthogonal recursion (K={k}, {iters} iterations)");
    let mut w = Worst::default();
    for &(alpha, xi) in cases {
        let ens = match EnsembleSpec::row_orthogonal(alpha, xi) {
            Ok(e) => e,
            Err(e) => return Check::error("solver", identity, SPECIALIZATION_TOL, e),
        };
        match compare_paths(&ens, k, iters, 23, (SolverPath::Generic, SolverPath::Specialized)) {
            Ok((gap, steps)) => w.see(gap, || format!("{} after {steps} steps", label(&ens))),
            Err(e) => return Check::error("solver", identity, SPECIALIZATION_TOL, e),
        }
    }
    Check::new("solver", identity, w.value, SPECIALIZATION_TOL, w.detail())
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub kind: EnsembleKind,
    pub alpha: f64,
    pub xi: f64,
    pub rho: f64,
}

impl Cell {
    pub fn ensemble(&self) -> ssmamp_core::Result<EnsembleSpec> {
        EnsembleSpec::new(self.kind.clone(), self.alpha, self.xi)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(alpha={}, xi={}, rho={})", self.kind.name(), self.alpha, self.xi, self.rho)
    }
}

/// The default sweep: `xi in {1, 10, 100}`, `alpha in {0.25, 0.5}`,
/// `rho in {0.1, 0.3}`, both named ensembles.
pub fn default_grid() -> Vec<Cell> {
    let mut out = Vec::new();
    for kind in [EnsembleKind::IidGaussian, EnsembleKind::RowOrthogonal] {
        for rho in [0.1, 0.3] {
            for alpha in [0.25, 0.5] {
                for xi in XIS {
                    out.push(Cell {
                        kind: kind.clone(),
                        alpha,
                        xi,
                        rho,
                    });
                }
            }
        }
    }
    out
}

/// Outcome of one converge-and-check run.
#[derive(Debug, Clone, PartialEq)]
pub struct TapRun {
    pub cell: Cell,
    pub path: SolverPath,
    pub stop: StopReason,
    pub iterations: usize,
    pub r1: Option<f64>,
}

pub fn tap_runs(cells: &[Cell], paths: &[Option<SolverPath>], k: usize, max_iters: usize, seed: u64) -> ssmamp_core::Result<Vec<TapRun>> {
    let mut out = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let ens = cell.ensemble()?;
        let prior = Prior::bernoulli_gaussian(cell.rho)?;
        let inst = ProblemInstance::synthesize(&ens, &prior, k, ssmamp_core::seed::derive_seed(seed, i as u64))?;
        let mut seen = Vec::new();
        for p in paths {
            let path = p.unwrap_or_else(|| SolverPath::preferred_for(&ens));
            if seen.contains(&path) {
                continue;
            }
            seen.push(path);
            let opts = SolverOptions {
                path,
                max_iters,
                tol: Some(CONVERGENCE_TOL),
                tap_diagnostics: false,
                ..SolverOptions::default()
            };
            let traj = run(&inst, &prior, &ens, &opts)?;
            let r1 = match (traj.converged(), traj.records.last()) {
                (true, Some(last)) => Some(tap_residual(&inst, &traj.estimate, last.chi, &prior, &ens)?.r1),
                _ => None,
            };
            out.push(TapRun {
                cell: cell.clone(),
                path,
                stop: traj.stop.clone(),
                iterations: traj.iterations(),
                r1,
            });
        }
    }
    Ok(out)
}

/// Every run that reached the convergence tolerance solves the TAP
/// equations; runs that diverged or hit the budget are excluded and listed.
pub fn tap_consistency_from(runs: &[TapRun], k: usize) -> Check {
    let identity = format!("converged runs satisfy TAP (K={k})");
    let mut w = Worst::default();
    let mut converged = 0;
    for r in runs {
        match r.r1 {
            Some(r1) => {
                converged += 1;
                w.see(r1, || format!("{} {}", r.cell, r.path.name()));
            }
            None => w.skipped.push(format!("{} {} ({})", r.cell, r.path.name(), r.stop.name())),
        }
    }
    let mut c = Check::new("solver", identity, w.value, TAP_TOL, w.detail());
    c.detail = format!("{converged}/{} runs converged; {}", runs.len(), c.detail);
    if converged == 0 {
        c.passed = false;
    }
    c
}

pub fn tap_consistency(cells: &[Cell], k: usize, max_iters: usize) -> Check {
    match tap_runs(cells, &[Some(SolverPath::Generic), None], k, max_iters, 31) {
        Ok(runs) => tap_consistency_from(&runs, k),
        Err(e) => Check::error("solver", "converged runs satisfy TAP", TAP_TOL, e),
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Posterior mean and variance under `p(x) exp(-(v/2)(x - psi)^2)` by direct
/// integration of the density; the atom of a spike-and-slab prior is added by hand.
pub fn tilted_moments_by_quadrature(prior: &Prior, psi: f64, v: f64) -> (f64, f64) {
    let (atom, slab_weight, slab_var) = match *prior {
        Prior::BernoulliGaussian { rho } => (1.0 - rho, rho, 1.0 / rho),
        Prior::Gaussian { variance } => (0.0, 1.0, variance),
    };
    let log_slab = |x: f64| {
        -0.5 * x * x / slab_var - 0.5 * v * (x - psi) * (x - psi) - 0.5 * (2.0 * std::f64::consts::PI * slab_var).ln()
    };
    let centre = v * psi * slab_var / (1.0 + slab_var * v);
    let width = (slab_var / (1.0 + slab_var * v)).sqrt();
    let log_atom = if atom > 0.0 { atom.ln() - 0.5 * v * psi * psi } else { f64::NEG_INFINITY };
    let shift = log_atom.max(slab_weight.ln() + log_slab(centre));
    let dens = |x: f64| slab_weight * (log_slab(x) - shift).exp();
    let (lo, hi) = (centre - 14.0 * width, centre + 14.0 * width);
    let n = 20_000;
    let z_slab = simpson(dens, lo, hi, n);
    let m1 = simpson(|x| x * dens(x), lo, hi, n);
    let m2 = simpson(|x| x * x * dens(x), lo, hi, n);
    let z = z_slab + (log_atom - shift).exp();
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// 20 x 20 grid: `psi` in [-4, 4], `v` log-spaced in [1e-2, 1e3].
pub fn denoiser_grid() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..20 {
        let psi = -4.0 + 8.0 * i as f64 / 19.0;
        for j in 0..20 {
            out.push((psi, 10f64.powf(-2.0 + 5.0 * j as f64 / 19.0)));
        }
    }
    out
}

pub fn test_priors() -> Vec<Prior> {
    vec![
        Prior::BernoulliGaussian { rho: 0.1 },
        Prior::BernoulliGaussian { rho: 0.3 },
        Prior::Gaussian { variance: 1.0 },
        Prior::Gaussian { variance: 2.5 },
    ]
}

/// Closed-form posterior moments against density quadrature, relative to
/// `max(|value|, 1)`.
pub fn denoiser() -> Check {
    let identity = "posterior mean and variance = density quadrature (20x20 grid)";
    let mut w = Worst::default();
    for prior in test_priors() {
        for (psi, v) in denoiser_grid() {
            let post = match prior.denoise(psi, v) {
                Ok(p) => p,
                Err(e) => return Check::error("prior", identity, DENOISER_TOL, e),
            };
            let (mean, var) = tilted_moments_by_quadrature(&prior, psi, v);
            let dm = (post.mean - mean).abs() / mean.abs().max(1.0);
            let dv = (post.variance - var).abs() / var.abs().max(1.0);
            w.see(dm.max(dv), || format!("{prior} psi={psi:.3} v={v:.3e}"));
        }
    }
    Check::new("prior", identity, w.value, DENOISER_TOL, w.detail())
}

/// Analytic `d mean / d psi` against Richardson-extrapolated central differences.
pub fn denoiser_derivative() -> Check {
    let identity = "field derivative = finite differences (relative)";
    let mut w = Worst::default();
    for prior in test_priors() {
        for (psi, v) in denoiser_grid() {
            let mean = |x: f64| prior.denoise(x, v).map(|p| p.mean);
            let analytic = match prior.denoise_derivative(psi, v) {
                Ok(d) => d,
                Err(e) => return Check::error("prior", identity, DERIVATIVE_TOL, e),
            };
            let h = 1e-3 / (1.0 + v).sqrt();
            let d = |h: f64| -> ssmamp_core::Result<f64> { Ok((mean(psi + h)? - mean(psi - h)?) / (2.0 * h)) };
            let fd = match (d(h / 2.0), d(h)) {
                (Ok(a), Ok(b)) => (4.0 * a - b) / 3.0,
                (Err(e), _) | (_, Err(e)) => return Check::error("prior", identity, DERIVATIVE_TOL, e),
            };
            w.see((fd - analytic).abs() / analytic.abs().max(1e-9), || {
                format!("{prior} psi={psi:.3} v={v:.3e}")
            });
        }
    }
    Check::new("prior", identity, w.value, DERIVATIVE_TOL, w.detail())
}

/// Problem sizes for the solver checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteSizes {
    pub k: usize,
    pub iters: usize,
    pub tap_k: usize,
    pub tap_max_iters: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            k: 1000,
            iters: 30,
            tap_k: 1000,
            tap_max_iters: 500,
        }
    }
}

/// Cells of the TAP check in the `validate` suite.
pub fn validate_tap_cells() -> Vec<Cell> {
    let mut out = Vec::new();
    for kind in [EnsembleKind::IidGaussian, EnsembleKind::RowOrthogonal] {
        for xi in [1.0, 10.0] {
            out.push(Cell {
                kind: kind.clone(),
                alpha: 0.5,
                xi,
                rho: 0.1,
            });
        }
    }
    out
}

/// The full `validate` suite.
pub fn suite(sizes: SuiteSizes) -> Vec<Check> {
    vec![
        r_at_origin(),
        composition(),
        reversion(),
        b_closed_forms(),
        denoiser(),
        denoiser_derivative(),
        amp_reduction(sizes.k, sizes.iters, &XIS),
        specialization(sizes.k, sizes.iters, &[(0.5, 1.0), (0.5, 10.0), (0.25, 100.0)]),
        tap_consistency(&validate_tap_cells(), sizes.tap_k, sizes.tap_max_iters),
    ]
}
