use crate::error::{invalid, Result};
use crate::instance::ProblemInstance;
use crate::prior::Prior;
use crate::rmt::EnsembleSpec;

/// Distance of `(m, chi)` from a solution of the TAP equations
/// `m = eta_v(psi)`, `psi = (h + J m - R(chi) m) / v`, `v = xi - R(chi)`,
/// `chi = <posterior variance at psi>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapResidual {
    /// `||m - eta_v(psi)||_2 / sqrt(K)`.
    pub r1: f64,
    /// `|chi - (1/K) sum_k var_v(psi_k)|`.
    pub r2: f64,
}

pub fn tap_residual(
    inst: &ProblemInstance,
    m: &[f64],
    chi: f64,
    prior: &Prior,
    ens: &EnsembleSpec,
) -> Result<TapResidual> {
    if m.len() != inst.n_cols() {
        return Err(invalid("estimate length differs from the instance"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("estimate is not finite"));
    }
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(invalid(format!("chi = {chi} must be positive")));
    }
    residual_from_gamma(&inst.gamma(m), m, chi, prior, ens)
}

pub(super) fn residual_from_gamma(
    gamma: &[f64],
    m: &[f64],
    chi: f64,
    prior: &Prior,
    ens: &EnsembleSpec,
) -> Result<TapResidual> {
    let r = ens.r_transform(chi)?;
    let v = ens.xi - r;
    if !(v > 0.0) {
        return Err(invalid(format!("v = xi - R(chi) = {v} is not positive")));
    }
    let mut sq = 0.0;
    let mut var = 0.0;
    for (g, mk) in gamma.iter().zip(m) {
        let post = prior.denoise((g - r * mk) / v, v)?;
        sq += (mk - post.mean) * (mk - post.mean);
        var += post.variance;
    }
    let k = m.len() as f64;
    Ok(TapResidual {
        r1: (sq / k).sqrt(),
        r2: (chi - var / k).abs(),
    })
}
