//! One field update `psi(t)` for each algorithm variant. The caller has already
//! pushed `chi(t)` and `R(chi(t))` onto the state's histories and set `v(t)`.

use crate::error::{Error, Result};
use crate::logreal::LogReal;
use crate::rmt::EnsembleSpec;
use crate::stats::memory_weights;

use super::{Memory, SolverState};

/// Generic single-step memory field
/// `psi(t) = (Q(t)/v(t)) sum_tau a_{t+1-tau} u(tau)`.
///
/// The history stores `Q(tau-1) u(tau) = (gamma(tau) - G m(tau-1)) / chi(tau)`,
/// so the `Q` factors enter only through the log-domain weights.
pub(super) fn generic(state: &mut SolverState, a: &[LogReal]) -> Result<()> {
    let Memory::Generic { history } = &mut state.memory else {
        return Err(Error::InvalidParameter("state does not carry a generic history".into()));
    };
    let chi = state.chi_curr;
    let g = state.g_mem;
    let scaled: Vec<f64> = state
        .gamma
        .iter()
        .zip(&state.m_prev)
        .map(|(gm, mp)| (gm - g * mp) / chi)
        .collect();
    history.push(scaled);
    let w = memory_weights(a, &state.r_history);
    let inv_v = 1.0 / state.v_curr;
    let k = state.m_curr.len();
    let mut psi = vec![0.0; k];
    for (wt, u) in w.iter().zip(history.iter()) {
        if *wt == 0.0 {
            continue;
        }
        for (p, ui) in psi.iter_mut().zip(u) {
            *p += wt * ui;
        }
    }
    for p in &mut psi {
        *p *= inv_v;
    }
    state.psi = psi;
    Ok(())
}

/// Row-orthogonal two-field recursion
/// `z_i(t) = (gamma(t) - xi_i m(t) + G z_i(t-1)) / xi_i`,
/// `psi(t) = c(t) [z_1(t) - z_2(t)]`, `c(t) = (alpha/xi) R / (chi v)`.
pub(super) fn row_orthogonal(state: &mut SolverState, ens: &EnsembleSpec) -> Result<()> {
    let (xi1, xi2) = ens.xi_pair();
    if xi1 == 0.0 || xi2 == 0.0 {
        return Err(Error::Degenerate(
            "xi_2 = 0 (alpha = 1); use the generic path".into(),
        ));
    }
    let Memory::RowOrthogonal { z1, z2 } = &mut state.memory else {
        return Err(Error::InvalidParameter("state does not carry two auxiliary fields".into()));
    };
    let g = state.g_mem;
    for (zi, xii) in [(&mut *z1, xi1), (&mut *z2, xi2)] {
        for ((z, gm), m) in zi.iter_mut().zip(&state.gamma).zip(&state.m_curr) {
            *z = (gm - xii * m + g * *z) / xii;
        }
    }
    let r = *state.r_history.last().expect("R history is pushed before the field update");
    let c = ens.alpha / ens.xi * r / (state.chi_curr * state.v_curr);
    state.psi = z1.iter().zip(z2.iter()).map(|(a, b)| c * (a - b)).collect();
    Ok(())
}

/// AMP: `z(t) = A^T (y - A m(t)) + G z(t-1) / xi`, `psi(t) = z(t) + m(t)`.
/// `residual` is `A^T (y - A m(t))`.
pub(super) fn amp(state: &mut SolverState, residual: &[f64], xi: f64) -> Result<()> {
    let Memory::Amp { z } = &mut state.memory else {
        return Err(Error::InvalidParameter("state does not carry an AMP field".into()));
    };
    let onsager = state.g_mem / xi;
    for (zk, rk) in z.iter_mut().zip(residual) {
        *zk = rk + onsager * *zk;
    }
    state.psi = z.iter().zip(&state.m_curr).map(|(z, m)| z + m).collect();
    Ok(())
}
