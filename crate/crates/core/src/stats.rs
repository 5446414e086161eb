//! Predictors for the statistics of the field `psi(t) ~ theta(t) + sigma_x(t) x`,
//! driven by the scalar sequences `chi(t)` and `v(t)`.
//!
//! Products of `R(chi(s))` over long windows are carried in the log domain so
//! that horizons of a few hundred iterations neither overflow nor underflow.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::logreal::LogReal;
use crate::prior::Prior;
use crate::quadrature::Expectation;
use crate::rmt::{EnsembleKind, EnsembleSpec};

/// `prod_{s=tau}^{t} r[s]` for `tau = 0..=t`.
fn suffix_products(r: &[f64], t: usize) -> Vec<LogReal> {
    let mut out = vec![LogReal::ONE; t + 1];
    let mut acc = LogReal::ONE;
    for tau in (0..=t).rev() {
        acc = acc * LogReal::new(r[tau]);
        out[tau] = acc;
    }
    out
}

/// Memory weights `w_tau = a_{t+1-tau} prod_{s=tau}^{t} R(chi(s))` for
/// `tau = 0..=t`, where `t = r.len() - 1` and `a = [a_1, a_2, ...]`.
/// Coefficients beyond the end of `a` count as zero.
pub fn memory_weights(a: &[LogReal], r: &[f64]) -> Vec<f64> {
    if r.is_empty() {
        return Vec::new();
    }
    let t = r.len() - 1;
    suffix_products(r, t)
        .into_iter()
        .enumerate()
        .map(|(tau, p)| {
            a.get(t - tau).map_or(0.0, |&an| (an * p).value())
        })
        .collect()
}

fn check_chi(chi: &[f64]) -> Result<()> {
    if chi.is_empty() {
        return Err(invalid("empty chi sequence"));
    }
    if let Some(c) = chi.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(invalid(format!("chi must be positive and finite, got {c}")));
    }
    Ok(())
}

fn r_sequence(chi: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    chi.iter().map(|&c| ens.r_transform(c)).collect()
}

/// `zeta(t) = Q(t) sum_{tau<=t} a_{t+1-tau} / (chi(tau) Q(tau-1))` for `t = 0..chi.len()`.
pub fn zeta_sequence(chi: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    check_chi(chi)?;
    let r = r_sequence(chi, ens)?;
    if let Some(z) = zeta_geometric(chi, &r, ens)? {
        return Ok(z);
    }
    zeta_convolution(chi, &r, ens)
}

/// For the named ensembles `a_n = (alpha/xi) sum_i s_i xi_i^{-n}`, so the
/// convolution collapses to `Z_i(t) = (R(chi(t))/xi_i) (Z_i(t-1) + 1/chi(t))`
/// and `zeta(t) = (alpha/xi) sum_i s_i Z_i(t)`. `None` for custom ensembles.
fn zeta_geometric(chi: &[f64], r: &[f64], ens: &EnsembleSpec) -> Result<Option<Vec<f64>>> {
    let (xi1, xi2) = ens.xi_pair();
    let terms: Vec<(f64, f64)> = match ens.kind {
        EnsembleKind::IidGaussian => vec![(ens.xi, 1.0)],
        EnsembleKind::RowOrthogonal => {
            if xi2 == 0.0 {
                return Err(Error::Degenerate(
                    "row-orthogonal ensemble with alpha = 1 has J = 0 and no R-inverse".into(),
                ));
            }
            vec![(xi1, 1.0), (xi2, -1.0)]
        }
        EnsembleKind::Custom { .. } => return Ok(None),
    };
    let scale = ens.alpha / ens.xi;
    let mut z = vec![0.0; terms.len()];
    Ok(Some(
        chi.iter()
            .zip(r)
            .map(|(c, rt)| {
                let mut acc = 0.0;
                for (zi, (xi_i, s)) in z.iter_mut().zip(&terms) {
                    *zi = rt / xi_i * (*zi + 1.0 / c);
                    acc += s * *zi;
                }
                scale * acc
            })
            .collect(),
    ))
}

/// The general `O(T^2)` form, used for custom ensembles.
pub(crate) fn zeta_convolution(chi: &[f64], r: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    let a = ens.memory_coeffs(chi.len())?;
    Ok((0..chi.len())
        .map(|t| {
            memory_weights(&a, &r[..=t])
                .iter()
                .zip(chi)
                .map(|(w, c)| w / c)
                .sum()
        })
        .collect())
}

/// `sigma_x(t) = (zeta(t) xi - zeta(t-1) R(chi(t))) / v(t)` with `zeta(-1) = 0`.
pub fn sigma_x_from_zeta(zeta: &[f64], chi: &[f64], v: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    if zeta.len() != chi.len() || v.len() != chi.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths differ: zeta {}, chi {}, v {}",
            zeta.len(),
            chi.len(),
            v.len()
        )));
    }
    (0..chi.len())
        .map(|t| {
            if v[t] == 0.0 || !v[t].is_finite() {
                return Err(invalid(format!("v({t}) = {} is not usable", v[t])));
            }
            let prev = if t == 0 { 0.0 } else { zeta[t - 1] };
            Ok((zeta[t] * ens.xi - prev * ens.r_transform(chi[t])?) / v[t])
        })
        .collect()
}

pub fn sigma_x_sequence(chi: &[f64], v: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    let zeta = zeta_sequence(chi, ens)?;
    sigma_x_from_zeta(&zeta, chi, v, ens)
}

/// `v(t) = xi - R(chi(t))`.
pub fn tap_v_sequence(chi: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    chi.iter().map(|&c| Ok(ens.xi - ens.r_transform(c)?)).collect()
}

/// `G(t, t-1) = (chi(t) / chi(t-1)) R(chi(t-1))`, zero at `t = 0`.
pub fn memory_sequence(chi: &[f64], ens: &EnsembleSpec) -> Result<Vec<f64>> {
    check_chi(chi)?;
    (0..chi.len())
        .map(|t| {
            if t == 0 {
                Ok(0.0)
            } else {
                Ok(chi[t] / chi[t - 1] * ens.r_transform(chi[t - 1])?)
            }
        })
        .collect()
}

/// Full covariance `C_theta(t, t')` of the Gaussian part of the field, given
/// the error correlation `C(tau, s)` of the estimates.
///
/// The first term `zeta(t') sigma_x(t) / v(t')` is not symmetric in general;
/// the result is returned as computed.
pub fn c_theta_matrix(
    chi: &[f64],
    v: &[f64],
    correlation: &[Vec<f64>],
    ens: &EnsembleSpec,
) -> Result<Vec<Vec<f64>>> {
    check_chi(chi)?;
    let n = chi.len();
    if v.len() != n || correlation.len() != n || correlation.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension(format!(
            "c_theta_matrix needs chi, v and a square correlation of size {n}"
        )));
    }
    let r = r_sequence(chi, ens)?;
    let zeta = zeta_sequence(chi, ens)?;
    let sigma = sigma_x_from_zeta(&zeta, chi, v, ens)?;
    let b = ens.b_coefficients(n)?;
    let mut nonzero = Vec::new();
    for p in 1..=n {
        for q in 1..=n {
            let co = b.get_log(p, q);
            if !co.is_zero() {
                nonzero.push((p, q, co));
            }
        }
    }
    // P[t][tau] = prod_{s=tau}^{t} R(chi(s)) / chi(tau)
    let scaled: Vec<Vec<LogReal>> = (0..n)
        .map(|t| {
            suffix_products(&r, t)
                .into_iter()
                .enumerate()
                .map(|(tau, p)| p * LogReal::new(1.0 / chi[tau]))
                .collect()
        })
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for t in 0..n {
        for tp in 0..n {
            let mut acc = 0.0;
            for &(p, q, co) in &nonzero {
                if p > t + 1 || q > tp + 1 {
                    continue;
                }
                let tau = t + 1 - p;
                let s = tp + 1 - q;
                let prev_zeta = if s == 0 { 0.0 } else { zeta[s - 1] };
                let centred = correlation[tau][s] - chi[s] * prev_zeta;
                acc += (co * scaled[t][tau] * scaled[tp][s]).value() * centred;
            }
            out[t][tp] = zeta[tp] / v[tp] * sigma[t] + acc / (v[t] * v[tp]);
        }
    }
    Ok(out)
}

/// Diagonal of `C_theta` for the iid ensemble with `C(t,t) = chi(t)`: only
/// `Co(1,1) = alpha/xi^2` survives, so each entry needs the current step alone.
fn iid_c_theta_diag(chi: &[f64], v: &[f64], zeta: &[f64], sigma: &[f64], r: &[f64], ens: &EnsembleSpec) -> Vec<f64> {
    let co = ens.alpha / (ens.xi * ens.xi);
    (0..chi.len())
        .map(|t| {
            let prev_zeta = if t == 0 { 0.0 } else { zeta[t - 1] };
            let s = r[t] / chi[t];
            zeta[t] * sigma[t] / v[t] + co * s * s * (chi[t] - chi[t] * prev_zeta) / (v[t] * v[t])
        })
        .collect()
}

/// Diagonal of `C_theta` for the row-orthogonal ensemble via the scalar
/// recursion for `kappa(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaPrediction {
    pub kappa: Vec<f64>,
    pub c_theta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub g_mem: Vec<f64>,
}

/// `kappa(t) = [C(t,t) - chi(t) zeta(t-1) + G(t,t-1)^2 kappa(t-1)] / (xi_1 xi_2)` and
/// `C_theta(t,t) = zeta(t) sigma_x(t) / v(t) - R(chi(t))^2 kappa(t) / (chi(t) v(t))^2`.
///
/// `C(t,t)` defaults to `chi(t)`; pass the error variances in `mse` to use
/// measured values instead.
pub fn kappa_recursion(
    chi: &[f64],
    v: &[f64],
    ens: &EnsembleSpec,
    mse: Option<&[f64]>,
) -> Result<KappaPrediction> {
    if ens.kind != EnsembleKind::RowOrthogonal {
        return Err(invalid("the kappa recursion applies to the row-orthogonal ensemble only"));
    }
    check_chi(chi)?;
    let (xi1, xi2) = ens.xi_pair();
    let p = xi1 * xi2;
    if p == 0.0 {
        return Err(Error::Degenerate(
            "xi_1 xi_2 = 0 (alpha = 1); the kappa recursion is undefined".into(),
        ));
    }
    if let Some(m) = mse {
        if m.len() != chi.len() {
            return Err(Error::Dimension("mse and chi lengths differ".into()));
        }
    }
    let zeta = zeta_sequence(chi, ens)?;
    let sigma = sigma_x_from_zeta(&zeta, chi, v, ens)?;
    let g = memory_sequence(chi, ens)?;
    let mut kappa = Vec::with_capacity(chi.len());
    let mut c_theta = Vec::with_capacity(chi.len());
    let mut prev = 0.0;
    for t in 0..chi.len() {
        let diag = mse.map_or(chi[t], |m| m[t]);
        let prev_zeta = if t == 0 { 0.0 } else { zeta[t - 1] };
        let k = (diag - chi[t] * prev_zeta + g[t] * g[t] * prev) / p;
        let r = ens.r_transform(chi[t])?;
        let s = r / (chi[t] * v[t]);
        c_theta.push(zeta[t] * sigma[t] / v[t] - s * s * k);
        kappa.push(k);
        prev = k;
    }
    Ok(KappaPrediction {
        kappa,
        c_theta,
        zeta,
        sigma_x: sigma,
        g_mem: g,
    })
}

/// State-evolution prediction for the AMP iteration, indexed like a solver
/// trajectory: entry `t` describes `m(t)` and the field `psi(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvolution {
    /// `C(t,t)`, the predicted per-component squared error of `m(t)`.
    pub mse: Vec<f64>,
    pub chi: Vec<f64>,
    pub v: Vec<f64>,
    /// Variance of `psi(t) - x`.
    pub c_theta: Vec<f64>,
}

/// Iterates `C_theta(t) = 1/xi + C(t,t)/alpha`, `C(t+1,t+1) = mse(v(t), C_theta(t))`,
/// `chi(t+1) = <posterior variance>` with `v(t) = xi - R(chi(t))`, from
/// `C(0,0) = chi(0) = <x^2>`. Returns `iterations + 1` entries.
pub fn amp_state_evolution(
    prior: &Prior,
    ens: &EnsembleSpec,
    iterations: usize,
    quad: &Expectation,
) -> Result<StateEvolution> {
    if ens.kind != EnsembleKind::IidGaussian {
        return Err(invalid("AMP state evolution applies to the iid Gaussian ensemble only"));
    }
    let mut se = StateEvolution {
        mse: Vec::with_capacity(iterations + 1),
        chi: Vec::with_capacity(iterations + 1),
        v: Vec::with_capacity(iterations + 1),
        c_theta: Vec::with_capacity(iterations + 1),
    };
    let mut mse = prior.second_moment();
    let mut chi = mse;
    for t in 0..=iterations {
        let v = ens.xi - ens.r_transform(chi)?;
        if !(v > 0.0) {
            return Err(invalid(format!("v({t}) = {v} is not positive")));
        }
        let c_theta = 1.0 / ens.xi + mse / ens.alpha;
        se.mse.push(mse);
        se.chi.push(chi);
        se.v.push(v);
        se.c_theta.push(c_theta);
        mse = prior.mse(v, c_theta, quad);
        chi = prior.mean_posterior_variance(v, c_theta, quad);
        if !(mse.is_finite() && chi.is_finite()) {
            return Err(Error::Divergence(format!("state evolution produced {mse}, {chi} at t = {t}")));
        }
        chi = chi.max(1e-300);
    }
    Ok(se)
}

/// Gaussianity diagnostics for `theta = psi - sigma_x x` against `N(0, c_theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCheck {
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub predicted_variance: f64,
    /// `(variance - predicted) / predicted`.
    pub variance_gap: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance to `N(0, predicted_variance)`.
    pub ks_distance: f64,
}

pub fn replica_field_check(
    psi: &[f64],
    x_true: Option<&[f64]>,
    sigma_x: f64,
    c_theta: f64,
) -> Result<FieldCheck> {
    let x = x_true.ok_or_else(|| invalid("the field check needs the true signal"))?;
    if x.len() != psi.len() {
        return Err(Error::Dimension("psi and x_true lengths differ".into()));
    }
    if psi.len() < 2 {
        return Err(invalid("the field check needs at least two samples"));
    }
    if !(c_theta > 0.0 && c_theta.is_finite()) {
        return Err(invalid(format!("predicted variance must be positive, got {c_theta}")));
    }
    let mut theta: Vec<f64> = psi.iter().zip(x).map(|(p, x)| p - sigma_x * x).collect();
    let n = theta.len() as f64;
    let mean = theta.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &t in &theta {
        let d = t - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let normal = Normal::new(0.0, c_theta.sqrt()).map_err(|e| invalid(e.to_string()))?;
    theta.sort_by(f64::total_cmp);
    let ks = theta
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = normal.cdf(t);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    Ok(FieldCheck {
        samples: psi.len(),
        mean,
        variance: m2,
        predicted_variance: c_theta,
        variance_gap: (m2 - c_theta) / c_theta,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        ks_distance: ks,
    })
}

/// Response `G(t, tau) = a_{t-tau} prod_{s=tau}^{t-1} G(s+1, s)` for `tau < t`,
/// from `a = [a_1, ...]` and `g_mem[t] = G(t, t-1)`. Row `t`, column `tau`;
/// entries with `tau >= t` are zero.
pub fn response_matrix(a: &[LogReal], g_mem: &[f64]) -> Vec<Vec<f64>> {
    let n = g_mem.len();
    let mut out = vec![vec![0.0; n]; n];
    for tau in 0..n {
        let mut prod = LogReal::ONE;
        for t in tau + 1..n {
            prod = prod * LogReal::new(g_mem[t]);
            out[t][tau] = a.get(t - tau - 1).map_or(0.0, |&an| (an * prod).value());
        }
    }
    out
}

/// Everything the predictors derive from one `(chi, v)` pair of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    pub horizon: usize,
    pub chi: Vec<f64>,
    pub v: Vec<f64>,
    /// `Q(t) = prod_{s<=t} R(chi(s))`; may under- or overflow for long horizons.
    pub q: Vec<f64>,
    pub g_mem: Vec<f64>,
    pub zeta: Vec<f64>,
    pub sigma_x: Vec<f64>,
    /// Diagonal of `C_theta`.
    pub c_theta_diag: Vec<f64>,
    pub c_theta: Option<Vec<Vec<f64>>>,
    pub kappa: Option<Vec<f64>>,
    pub correlation: Option<Vec<Vec<f64>>>,
}

impl FieldStats {
    /// Predictions from the scalar sequences. With a correlation matrix the full
    /// `C_theta` is built; without one the diagonal comes from the closed-form
    /// recursions (`C(t,t) = chi(t)`), which exist for the two named ensembles.
    pub fn predict(
        chi: &[f64],
        v: &[f64],
        ens: &EnsembleSpec,
        correlation: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_chi(chi)?;
        let r = r_sequence(chi, ens)?;
        let mut q = Vec::with_capacity(chi.len());
        let mut acc = 1.0;
        for rt in &r {
            acc *= rt;
            q.push(acc);
        }
        let zeta = zeta_sequence(chi, ens)?;
        let sigma_x = sigma_x_from_zeta(&zeta, chi, v, ens)?;
        let g_mem = memory_sequence(chi, ens)?;
        let (c_theta, c_theta_diag, kappa) = match &correlation {
            Some(c) => {
                let full = c_theta_matrix(chi, v, c, ens)?;
                let diag = (0..chi.len()).map(|t| full[t][t]).collect();
                let kappa = if ens.kind == EnsembleKind::RowOrthogonal {
                    let d: Vec<f64> = (0..chi.len()).map(|t| c[t][t]).collect();
                    Some(kappa_recursion(chi, v, ens, Some(&d))?.kappa)
                } else {
                    None
                };
                (Some(full), diag, kappa)
            }
            None => match ens.kind {
                EnsembleKind::RowOrthogonal => {
                    let k = kappa_recursion(chi, v, ens, None)?;
                    (None, k.c_theta, Some(k.kappa))
                }
                EnsembleKind::IidGaussian => (None, iid_c_theta_diag(chi, v, &zeta, &sigma_x, &r, ens), None),
                _ => {
                    let diag_c: Vec<Vec<f64>> = (0..chi.len())
                        .map(|t| (0..chi.len()).map(|s| if s == t { chi[t] } else { 0.0 }).collect())
                        .collect();
                    let full = c_theta_matrix(chi, v, &diag_c, ens)?;
                    (None, (0..chi.len()).map(|t| full[t][t]).collect(), None)
                }
            },
        };
        Ok(Self {
            horizon: chi.len(),
            chi: chi.to_vec(),
            v: v.to_vec(),
            q,
            g_mem,
            zeta,
            sigma_x,
            c_theta_diag,
            c_theta,
            kappa,
            correlation,
        })
    }
}
