//! Random-matrix calculus for the coupling matrix `J = xi*I - xi*A^T A`.
//!
//! Everything here is phrased in terms of the limiting eigenvalue distribution
//! of `J`: its R-transform `R(w) = sum_n c_n w^(n-1)` (the `c_n` are free
//! cumulants), the Taylor coefficients `a_n` of the compositional inverse
//! `R^{-1}`, and the coefficients of the bivariate transform
//!
//! ```text
//! B(w, z) = (z - w) / (1/R^{-1}(w) - 1/R^{-1}(z))
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::logreal::LogReal;
use crate::series;

pub const DEFAULT_TRUNCATION: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleKind {
    /// Entries of `A` iid `N(0, 1/N)`.
    IidGaussian,
    /// `A = alpha^{-1/2} P O` with `O` Haar on `O(K)` and `P` keeping the first `N` rows.
    RowOrthogonal,
    /// Free cumulants `c_1, c_2, ...` of the spectrum of `J` supplied directly.
    Custom { cumulants: Vec<f64> },
}

impl EnsembleKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleKind::IidGaussian => "iid_gaussian",
            EnsembleKind::RowOrthogonal => "row_orthogonal",
            EnsembleKind::Custom { .. } => "custom",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "iid" | "iid_gaussian" | "gaussian" => Ok(EnsembleKind::IidGaussian),
            "row_orthogonal" | "roworthogonal" | "row_orth" => Ok(EnsembleKind::RowOrthogonal),
            other => Err(invalid(format!(
                "unknown ensemble '{other}' (custom ensembles need cumulants and are built in code)"
            ))),
        }
    }
}

/// A sensing-matrix ensemble together with the aspect ratio `alpha = N/K`
/// and the noise precision `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub alpha: f64,
    pub xi: f64,
    /// Order used for series work when the caller does not ask for a specific one.
    pub truncation: usize,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, alpha: f64, xi: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(invalid(format!("xi must be positive and finite, got {xi}")));
        }
        if let EnsembleKind::Custom { cumulants } = &kind {
            if cumulants.is_empty() || cumulants.iter().any(|c| !c.is_finite()) {
                return Err(invalid("custom ensemble needs finite free cumulants"));
            }
        }
        Ok(Self {
            kind,
            alpha,
            xi,
            truncation: DEFAULT_TRUNCATION,
        })
    }

    pub fn iid_gaussian(alpha: f64, xi: f64) -> Result<Self> {
        Self::new(EnsembleKind::IidGaussian, alpha, xi)
    }

    pub fn row_orthogonal(alpha: f64, xi: f64) -> Result<Self> {
        Self::new(EnsembleKind::RowOrthogonal, alpha, xi)
    }

    pub fn custom(alpha: f64, xi: f64, cumulants: Vec<f64>) -> Result<Self> {
        Self::new(EnsembleKind::Custom { cumulants }, alpha, xi)
    }

    /// Custom ensemble from the free cumulants of the Gram matrix `A^T A`,
    /// using `R(w) = xi - xi * R_gram(-xi * w)`.
    pub fn custom_from_gram_cumulants(alpha: f64, xi: f64, gram: &[f64]) -> Result<Self> {
        Self::custom(alpha, xi, gram_to_coupling_cumulants(xi, gram))
    }

    pub fn with_truncation(mut self, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(invalid("series truncation must be at least 1"));
        }
        self.truncation = truncation;
        Ok(self)
    }

    /// `(xi_1, xi_2) = (xi, xi (alpha - 1) / alpha)`. `xi_2 <= 0` for every valid alpha.
    pub fn xi_pair(&self) -> (f64, f64) {
        (self.xi, self.xi * (self.alpha - 1.0) / self.alpha)
    }

    /// R-transform of the limiting spectrum of `J`.
    pub fn r_transform(&self, omega: f64) -> Result<f64> {
        if !omega.is_finite() {
            return Err(Error::Domain {
                omega,
                reason: "argument is not finite",
            });
        }
        let (alpha, xi) = (self.alpha, self.xi);
        match &self.kind {
            EnsembleKind::IidGaussian => {
                let denom = alpha + xi * omega;
                if denom == 0.0 {
                    return Err(Error::Domain {
                        omega,
                        reason: "pole at alpha + xi*omega = 0",
                    });
                }
                Ok(xi * xi * omega / denom)
            }
            EnsembleKind::RowOrthogonal => {
                // R = xi - (b - sqrt(D)) / (2w) with b = 1 + u/alpha, D = b^2 - 4u, u = xi*w.
                // Rationalised so that w = 0 gives exactly 0 and small w loses no digits.
                let u = xi * omega;
                let b = 1.0 + u / alpha;
                let d_minus_one = u * (2.0 / alpha + u / (alpha * alpha) - 4.0);
                let d = 1.0 + d_minus_one;
                if d < 0.0 {
                    return Err(Error::Domain {
                        omega,
                        reason: "negative discriminant in the row-orthogonal R-transform",
                    });
                }
                let root = d.sqrt();
                let denom = b + root;
                if denom == 0.0 {
                    return Err(Error::Domain {
                        omega,
                        reason: "branch point of the row-orthogonal R-transform",
                    });
                }
                Ok(xi * (u / alpha + d_minus_one / (root + 1.0)) / denom)
            }
            EnsembleKind::Custom { cumulants } => Ok(series::eval(cumulants, omega)),
        }
    }

    /// Free cumulants `c_1, ..., c_n` of the spectrum of `J`, i.e. the Taylor
    /// coefficients of `R` at zero. For the row-orthogonal ensemble they are
    /// produced by power-series arithmetic on the closed-form R-transform.
    pub fn free_cumulants(&self, n: usize) -> Result<Vec<f64>> {
        let (alpha, xi) = (self.alpha, self.xi);
        match &self.kind {
            EnsembleKind::IidGaussian => {
                // R(w) = (xi^2/alpha) w / (1 + xi w / alpha)
                let lead = xi * xi / alpha;
                let ratio = -xi / alpha;
                Ok((0..n)
                    .map(|k| if k == 0 { 0.0 } else { lead * ratio.powi(k as i32 - 1) })
                    .collect())
            }
            EnsembleKind::RowOrthogonal => {
                let len = n + 1;
                let disc = [1.0, 2.0 * xi / alpha - 4.0 * xi, (xi / alpha).powi(2)];
                let root = series::sqrt(&disc, len)?;
                let b = [1.0, xi / alpha];
                // (b - sqrt(D)) / (2w): numerator has zero constant term.
                let frac: Vec<f64> = (1..len)
                    .map(|k| {
                        let bk = b.get(k).copied().unwrap_or(0.0);
                        (bk - root[k]) / 2.0
                    })
                    .collect();
                Ok((0..n)
                    .map(|k| if k == 0 { xi - frac[0] } else { -frac[k] })
                    .collect())
            }
            EnsembleKind::Custom { cumulants } => {
                if cumulants.len() < n {
                    return Err(Error::InsufficientCumulants {
                        needed: n,
                        available: cumulants.len(),
                    });
                }
                Ok(cumulants[..n].to_vec())
            }
        }
    }

    /// Coefficients `a_1, ..., a_{n_max}` of `R^{-1}(w) = sum_n a_n w^n`.
    ///
    /// Closed forms for the two named ensembles; Lagrange inversion of the
    /// supplied cumulants for custom ones.
    pub fn r_inverse_coeffs(&self, n_max: usize) -> Result<Vec<f64>> {
        if n_max == 0 {
            return Err(invalid("n_max must be at least 1"));
        }
        let (alpha, xi) = (self.alpha, self.xi);
        let scale = alpha / xi;
        match &self.kind {
            EnsembleKind::IidGaussian => Ok((1..=n_max)
                .map(|n| scale * xi.powi(-(n as i32)))
                .collect()),
            EnsembleKind::RowOrthogonal => {
                let (xi1, xi2) = self.xi_pair();
                if xi2 == 0.0 {
                    return Err(Error::Degenerate(
                        "row-orthogonal ensemble with alpha = 1 has J = 0 and no R-inverse".into(),
                    ));
                }
                Ok((1..=n_max)
                    .map(|n| scale * (xi1.powi(-(n as i32)) - xi2.powi(-(n as i32))))
                    .collect())
            }
            EnsembleKind::Custom { cumulants } => {
                if cumulants.len() < n_max + 1 {
                    return Err(Error::InsufficientCumulants {
                        needed: n_max + 1,
                        available: cumulants.len(),
                    });
                }
                series::revert(&cumulants[..=n_max], n_max)
            }
        }
    }

    /// Up to `n` inverse coefficients for use as memory weights, in the log
    /// domain: `a_n` underflows at large `n` while `a_n R^n` stays finite.
    /// Custom ensembles stop at their series truncation (or at the available
    /// cumulants); later coefficients are treated as zero by callers.
    pub fn memory_coeffs(&self, n: usize) -> Result<Vec<LogReal>> {
        let n = n.max(1);
        let ln_scale = (self.alpha / self.xi).ln();
        // (+-|x|)^(-k) as a signed log
        let inv_pow = |x: f64, k: usize| {
            let sign = if x < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            LogReal::from_parts(sign, ln_scale - k as f64 * x.abs().ln())
        };
        match &self.kind {
            EnsembleKind::IidGaussian => Ok((1..=n).map(|k| inv_pow(self.xi, k)).collect()),
            EnsembleKind::RowOrthogonal => {
                let (xi1, xi2) = self.xi_pair();
                if xi2 == 0.0 {
                    return Err(Error::Degenerate(
                        "row-orthogonal ensemble with alpha = 1 has J = 0 and no R-inverse".into(),
                    ));
                }
                Ok((1..=n)
                    .map(|k| {
                        let second = inv_pow(xi2, k);
                        inv_pow(xi1, k) + LogReal::from_parts(-second.sign, second.ln_abs)
                    })
                    .collect())
            }
            EnsembleKind::Custom { cumulants } => {
                let avail = cumulants.len().saturating_sub(1);
                let a = self.r_inverse_coeffs(n.min(self.truncation).min(avail).max(1))?;
                Ok(a.into_iter().map(LogReal::new).collect())
            }
        }
    }

    /// `a_n` obtained by reverting the Taylor series of `R`, regardless of
    /// whether a closed form exists.
    pub fn r_inverse_coeffs_by_reversion(&self, n_max: usize) -> Result<Vec<f64>> {
        let c = self.free_cumulants(n_max + 1)?;
        series::revert(&c, n_max)
    }

    /// Coefficients `Co_{w^n z^k}[B]` for `1 <= n, k <= n_max`.
    pub fn b_coefficients(&self, n_max: usize) -> Result<BCoefficients> {
        if n_max == 0 {
            return Err(invalid("n_max must be at least 1"));
        }
        let (alpha, xi) = (self.alpha, self.xi);
        match &self.kind {
            EnsembleKind::IidGaussian => {
                let mut b = BCoefficients::zeros(n_max);
                b.set(1, 1, alpha / (xi * xi));
                Ok(b)
            }
            EnsembleKind::RowOrthogonal => {
                let (xi1, xi2) = self.xi_pair();
                if xi2 == 0.0 {
                    return Err(Error::Degenerate(
                        "row-orthogonal ensemble with alpha = 1 has no B-transform".into(),
                    ));
                }
                let p = xi1 * xi2;
                let mut b = BCoefficients::zeros(n_max);
                for n in 1..=n_max {
                    // -(xi1 xi2)^(-n)
                    let sign = if p < 0.0 && n % 2 == 1 { 1.0 } else { -1.0 };
                    b.set_log(n, n, LogReal::from_parts(sign, -(n as f64) * p.abs().ln()));
                }
                Ok(b)
            }
            EnsembleKind::Custom { .. } => {
                let a = self.r_inverse_coeffs(2 * n_max - 1)?;
                b_coefficients_from_inverse(&a, n_max)
            }
        }
    }
}

/// Square table of bivariate coefficients, indexed from 1 in both variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BCoefficients {
    order: usize,
    values: Vec<LogReal>,
}

impl BCoefficients {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            values: vec![LogReal::ZERO; order * order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `Co_{w^n z^k}`; zero outside `1..=order`.
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.get_log(n, k).value()
    }

    /// Same coefficient in the log domain; closed forms never underflow here.
    pub fn get_log(&self, n: usize, k: usize) -> LogReal {
        if n == 0 || k == 0 || n > self.order || k > self.order {
            return LogReal::ZERO;
        }
        self.values[(n - 1) * self.order + (k - 1)]
    }

    fn set(&mut self, n: usize, k: usize, value: f64) {
        self.set_log(n, k, LogReal::new(value));
    }

    fn set_log(&mut self, n: usize, k: usize, value: LogReal) {
        self.values[(n - 1) * self.order + (k - 1)] = value;
    }

    pub fn max_abs_diff(&self, other: &BCoefficients) -> f64 {
        let order = self.order.max(other.order);
        let mut worst = 0.0f64;
        for n in 1..=order {
            for k in 1..=order {
                worst = worst.max((self.get(n, k) - other.get(n, k)).abs());
            }
        }
        worst
    }
}

/// Expands `B(w, z)` as a bivariate power series from the inverse coefficients
/// `a = [a_1, a_2, ...]` (at least `2*n_max - 1` of them).
///
/// With `1/R^{-1}(w) = P(w)/w`, one gets `B = w z / D(w, z)` where
/// `D(0,0) = p_0` and `D(i,j) = -p_{i+j}` for `i, j >= 1`; `1/D` is inverted
/// on the box `[0, n_max)^2`, which is closed under multiplication.
pub fn b_coefficients_from_inverse(a: &[f64], n_max: usize) -> Result<BCoefficients> {
    if n_max == 0 {
        return Err(invalid("n_max must be at least 1"));
    }
    let needed = 2 * n_max - 1;
    if a.len() < needed {
        return Err(Error::Series(format!(
            "need {needed} inverse coefficients for a B-expansion of order {n_max}, have {}",
            a.len()
        )));
    }
    let p = series::reciprocal(&a[..needed], needed)?;
    let m = n_max;
    let d = |i: usize, j: usize| -> f64 {
        match (i, j) {
            (0, 0) => p[0],
            (0, _) | (_, 0) => 0.0,
            _ => -p[i + j],
        }
    };
    let mut e = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = if i == 0 && j == 0 { 1.0 } else { 0.0 };
            for ip in 1..=i {
                for jp in 1..=j {
                    acc -= d(ip, jp) * e[(i - ip) * m + (j - jp)];
                }
            }
            let v = acc / p[0];
            if !v.is_finite() {
                return Err(Error::Series(format!(
                    "bivariate expansion produced a non-finite coefficient at ({i}, {j})"
                )));
            }
            e[i * m + j] = v;
        }
    }
    Ok(BCoefficients {
        order: m,
        values: e.into_iter().map(LogReal::new).collect(),
    })
}

/// `c_1 = xi (1 - c~_1)`, `c_n = (-xi)^n c~_n` for `n >= 2`.
pub fn gram_to_coupling_cumulants(xi: f64, gram: &[f64]) -> Vec<f64> {
    gram.iter()
        .enumerate()
        .map(|(i, &g)| {
            let n = i as i32 + 1;
            if n == 1 {
                xi * (1.0 - g)
            } else {
                (-xi).powi(n) * g
            }
        })
        .collect()
}

/// Free cumulants `k_1..k_n` from moments `m_1..m_n` via `M(z) = C(z M(z))`
/// with `M(z) = 1 + sum m_n z^n` and `C(w) = 1 + sum k_n w^n`.
pub fn free_cumulants_from_moments(moments: &[f64]) -> Vec<f64> {
    let n = moments.len();
    let len = n + 1;
    // w = z M(z)
    let mut w = vec![0.0; len];
    if len > 1 {
        w[1] = 1.0;
    }
    for (i, &m) in moments.iter().enumerate() {
        if i + 2 < len {
            w[i + 2] = m;
        }
    }
    let mut powers: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut current = vec![1.0];
    for _ in 0..n {
        current = series::mul(&current, &w, len);
        powers.push(current.clone());
    }
    let mut kappa = Vec::with_capacity(n);
    for order in 1..=n {
        let lower: f64 = (1..order).map(|k| kappa[k - 1] * powers[k - 1][order]).sum();
        kappa.push(moments[order - 1] - lower);
    }
    kappa
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_at_zero_is_exactly_zero() {
        for alpha in [0.25, 0.5, 1.0] {
            for xi in [1.0, 10.0, 100.0] {
                assert_eq!(EnsembleSpec::iid_gaussian(alpha, xi).unwrap().r_transform(0.0).unwrap(), 0.0);
                assert_eq!(EnsembleSpec::row_orthogonal(alpha, xi).unwrap().r_transform(0.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn iid_r_value() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        assert!((ens.r_transform(1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn row_orthogonal_small_argument_limit() {
        let ens = EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap();
        // c_2 = xi^2 (1/alpha - 1) = 1
        for w in [1e-6, 1e-9, 1e-12, -1e-10] {
            let r = ens.r_transform(w).unwrap();
            assert!((r / w - 1.0).abs() < 1e-5, "w={w} r={r}");
        }
    }

    #[test]
    fn row_orthogonal_alpha_one_is_degenerate() {
        let ens = EnsembleSpec::row_orthogonal(1.0, 3.0).unwrap();
        assert!(ens.r_transform(0.2).unwrap().abs() < 1e-15);
        assert!(matches!(ens.r_inverse_coeffs(3), Err(Error::Degenerate(_))));
        assert!(matches!(ens.b_coefficients(3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pole_is_reported() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        assert!(matches!(ens.r_transform(-0.5), Err(Error::Domain { .. })));
        assert!(ens.r_transform(f64::NAN).is_err());
    }

    #[test]
    fn closed_form_inverse_examples() {
        let a = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap().r_inverse_coeffs(3).unwrap();
        assert_eq!(a, vec![0.5, 0.5, 0.5]);
        let a = EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap().r_inverse_coeffs(3).unwrap();
        assert_eq!(a, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn iid_second_cumulant() {
        let ens = EnsembleSpec::iid_gaussian(0.25, 10.0).unwrap();
        let c = ens.free_cumulants(3).unwrap();
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 100.0 / 0.25).abs() < 1e-9);
    }

    #[test]
    fn custom_needs_enough_cumulants() {
        let ens = EnsembleSpec::custom(0.5, 1.0, vec![0.0, 2.0, 0.1]).unwrap();
        assert!(matches!(
            ens.r_inverse_coeffs(3),
            Err(Error::InsufficientCumulants { needed: 4, available: 3 })
        ));
        assert!(ens.r_inverse_coeffs(2).is_ok());
    }

    #[test]
    fn b_closed_forms() {
        let b = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap().b_coefficients(4).unwrap();
        for n in 1..=4 {
            for k in 1..=4 {
                let want = if (n, k) == (1, 1) { 0.5 } else { 0.0 };
                assert_eq!(b.get(n, k), want);
            }
        }
        let b = EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap().b_coefficients(3).unwrap();
        assert_eq!([b.get(1, 1), b.get(2, 2), b.get(3, 3)], [1.0, -1.0, 1.0]);
        assert_eq!(b.get(1, 2), 0.0);
    }

    #[test]
    fn gram_conversion_matches_iid_cumulants() {
        // Marchenko-Pastur free cumulants of A^T A: c~_n = alpha^{1-n}.
        let (alpha, xi) = (0.5f64, 2.0f64);
        let gram: Vec<f64> = (1..=8).map(|n| alpha.powi(1 - n)).collect();
        let conv = gram_to_coupling_cumulants(xi, &gram);
        let direct = EnsembleSpec::iid_gaussian(alpha, xi).unwrap().free_cumulants(8).unwrap();
        for (x, y) in conv.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn semicircle_cumulants_from_moments() {
        // Catalan moments -> only k_2 = 1.
        let moments = [0.0, 1.0, 0.0, 2.0, 0.0, 5.0, 0.0, 14.0];
        let k = free_cumulants_from_moments(&moments);
        for (i, v) in k.iter().enumerate() {
            let want = if i == 1 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "k_{} = {v}", i + 1);
        }
    }

    #[test]
    fn log_memory_coeffs_agree_and_do_not_underflow() {
        for ens in [
            EnsembleSpec::iid_gaussian(0.25, 100.0).unwrap(),
            EnsembleSpec::row_orthogonal(0.25, 100.0).unwrap(),
            EnsembleSpec::row_orthogonal(0.75, 0.3).unwrap(),
        ] {
            let plain = ens.r_inverse_coeffs(20).unwrap();
            let logged = ens.memory_coeffs(400).unwrap();
            for (p, l) in plain.iter().zip(&logged) {
                assert!((l.value() - p).abs() <= 1e-13 * p.abs(), "{ens:?}");
            }
            assert!(logged.iter().all(|c| !c.is_zero() && c.ln_abs.is_finite()));
        }
        let b = EnsembleSpec::row_orthogonal(0.5, 100.0).unwrap().b_coefficients(300).unwrap();
        assert_eq!(b.get(300, 300), 0.0);
        assert!(!b.get_log(300, 300).is_zero());
    }
}
