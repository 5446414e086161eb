//! Truncated formal power series with `f64` coefficients.
//!
//! A series is a slice `c` where `c[k]` is the coefficient of `w^k`. Every
//! operation takes an explicit output length; coefficients past the end of an
//! input slice are treated as zero.

use crate::error::{Error, Result};

fn coeff(c: &[f64], k: usize) -> f64 {
    c.get(k).copied().unwrap_or(0.0)
}

/// Horner evaluation of a polynomial / truncated series.
pub fn eval(c: &[f64], w: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * w + ck)
}

pub fn mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &ai) in a.iter().enumerate().take(len) {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(len - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Multiplicative inverse `1/f`. Requires `f[0] != 0`.
pub fn reciprocal(f: &[f64], len: usize) -> Result<Vec<f64>> {
    let f0 = coeff(f, 0);
    if f0 == 0.0 || !f0.is_finite() {
        return Err(Error::Series(format!(
            "reciprocal needs a nonzero constant term, got {f0}"
        )));
    }
    let mut g = Vec::with_capacity(len);
    for n in 0..len {
        let mut acc = if n == 0 { 1.0 } else { 0.0 };
        for k in 1..=n {
            acc -= coeff(f, k) * g[n - k];
        }
        g.push(acc / f0);
    }
    Ok(g)
}

/// Square root with positive constant term. Requires `f[0] > 0`.
pub fn sqrt(f: &[f64], len: usize) -> Result<Vec<f64>> {
    let f0 = coeff(f, 0);
    if f0 <= 0.0 || !f0.is_finite() {
        return Err(Error::Series(format!(
            "square root needs a positive constant term, got {f0}"
        )));
    }
    let g0 = f0.sqrt();
    let mut g = Vec::with_capacity(len);
    for n in 0..len {
        if n == 0 {
            g.push(g0);
            continue;
        }
        let cross: f64 = (1..n).map(|k| g[k] * g[n - k]).sum();
        g.push((coeff(f, n) - cross) / (2.0 * g0));
    }
    Ok(g)
}

/// `outer(inner(w))` truncated to `len` terms. Requires `inner[0] == 0`.
pub fn compose(outer: &[f64], inner: &[f64], len: usize) -> Result<Vec<f64>> {
    if coeff(inner, 0) != 0.0 {
        return Err(Error::Series(
            "inner series of a composition must have zero constant term".into(),
        ));
    }
    let mut acc = vec![0.0; len];
    for &ck in outer.iter().rev() {
        acc = mul(&acc, inner, len);
        if len > 0 {
            acc[0] += ck;
        }
    }
    Ok(acc)
}

/// Compositional inverse by Lagrange inversion.
///
/// `f` must have `f[0] == 0` and `f[1] != 0`. Returns `[g_1, ..., g_{n_max}]`,
/// the coefficients of `g` with `f(g(w)) = w + O(w^{n_max+1})`:
///
/// `g_n = (1/n) [w^{n-1}] (w / f(w))^n`.
pub fn revert(f: &[f64], n_max: usize) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(Error::Series("reversion order must be at least 1".into()));
    }
    if coeff(f, 0) != 0.0 {
        return Err(Error::Series(format!(
            "series to revert has nonzero constant term {}",
            coeff(f, 0)
        )));
    }
    if coeff(f, 1) == 0.0 {
        return Err(Error::Series(
            "series to revert has zero linear term; inverse is not analytic at 0".into(),
        ));
    }
    // f(w)/w = f_1 + f_2 w + ...
    let shifted: Vec<f64> = (1..=n_max).map(|k| coeff(f, k)).collect();
    let phi = reciprocal(&shifted, n_max)?;
    let mut power = vec![1.0; 1];
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        power = mul(&power, &phi, n_max);
        out.push(power[n - 1] / n as f64);
    }
    Ok(out)
}
