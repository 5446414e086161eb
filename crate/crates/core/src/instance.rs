//! Problem instances `y = A x + n` and the derived quantities `h = xi A^T y`
//! and `J = xi I - xi A^T A` (applied through products with `A`).

use crate::error::{Error, Result};
use crate::matrix::{rows_for, sample_matrix, SensingMatrix};
use crate::prior::Prior;
use crate::rmt::EnsembleSpec;
use crate::seed::{stream_rng, STREAM_NOISE, STREAM_SIGNAL};

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: SensingMatrix,
    pub x_true: Option<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
    pub y: Vec<f64>,
    pub xi: f64,
    h: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(a: SensingMatrix, y: Vec<f64>, xi: f64, x_true: Option<Vec<f64>>) -> Result<Self> {
        if y.len() != a.n_rows() {
            return Err(Error::Dimension(format!(
                "observation has {} entries, matrix has {} rows",
                y.len(),
                a.n_rows()
            )));
        }
        if let Some(x) = &x_true {
            if x.len() != a.n_cols() {
                return Err(Error::Dimension(format!(
                    "signal has {} entries, matrix has {} columns",
                    x.len(),
                    a.n_cols()
                )));
            }
        }
        let h = a.matvec_t(&y).into_iter().map(|v| xi * v).collect();
        Ok(Self {
            a,
            x_true,
            noise: None,
            y,
            xi,
            h,
        })
    }

    /// Samples `A`, `x ~ prior` and `n ~ N(0, 1/xi)` from independent streams of `seed`.
    pub fn synthesize(ens: &EnsembleSpec, prior: &Prior, n_cols: usize, seed: u64) -> Result<Self> {
        let n_rows = rows_for(ens.alpha, n_cols);
        let a = sample_matrix(ens, n_rows, n_cols, seed)?;
        let x = prior.sample_vec(n_cols, &mut stream_rng(seed, STREAM_SIGNAL));
        let sd = 1.0 / ens.xi.sqrt();
        let mut noise_rng = stream_rng(seed, STREAM_NOISE);
        let noise: Vec<f64> = (0..n_rows)
            .map(|_| sd * noise_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = a.matvec(&x).iter().zip(&noise).map(|(ax, n)| ax + n).collect();
        let mut inst = Self::new(a, y, ens.xi, Some(x))?;
        inst.noise = Some(noise);
        Ok(inst)
    }

    pub fn n_cols(&self) -> usize {
        self.a.n_cols()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// `J m = xi m - xi A^T A m`.
    pub fn apply_j(&self, m: &[f64]) -> Vec<f64> {
        let atam = self.a.matvec_t(&self.a.matvec(m));
        m.iter().zip(atam).map(|(mi, gi)| self.xi * (mi - gi)).collect()
    }

    /// `gamma = h + J m`.
    pub fn gamma(&self, m: &[f64]) -> Vec<f64> {
        self.apply_j(m).into_iter().zip(&self.h).map(|(j, h)| j + h).collect()
    }

    /// `A^T (y - A m)`; equals `gamma / xi - m`.
    pub fn residual_correlation(&self, m: &[f64]) -> Vec<f64> {
        let am = self.a.matvec(m);
        let r: Vec<f64> = self.y.iter().zip(am).map(|(y, a)| y - a).collect();
        self.a.matvec_t(&r)
    }

    /// Dense `J`, row-major `K x K`. Only for small problems.
    pub fn dense_j(&self) -> Result<Vec<f64>> {
        let k = self.n_cols();
        if k > 4096 {
            return Err(Error::Dimension(format!("refusing to materialise J for K = {k}")));
        }
        let mut j = self.a.gram();
        for (idx, v) in j.iter_mut().enumerate() {
            let diag = if idx / k == idx % k { 1.0 } else { 0.0 };
            *v = self.xi * (diag - *v);
        }
        Ok(j)
    }

    /// Per-component squared error `||m - x||^2 / K`, when the truth is known.
    pub fn mse(&self, m: &[f64]) -> Option<f64> {
        self.x_true.as_ref().map(|x| {
            x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m.len() as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn implicit_j_matches_dense() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 3.0).unwrap();
        let prior = Prior::bernoulli_gaussian(0.3).unwrap();
        let inst = ProblemInstance::synthesize(&ens, &prior, 40, 11).unwrap();
        let m: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = inst.dense_j().unwrap();
        let implicit = inst.apply_j(&m);
        for r in 0..40 {
            let want: f64 = (0..40).map(|c| dense[r * 40 + c] * m[c]).sum();
            assert!((implicit[r] - want).abs() < 1e-12);
        }
        // h = xi A^T y computed densely
        for k in 0..40 {
            let want: f64 = inst.xi * (0..20).map(|i| inst.a.get(i, k) * inst.y[i]).sum::<f64>();
            assert!((inst.h()[k] - want).abs() < 1e-12);
        }
        let rc = inst.residual_correlation(&m);
        let g = inst.gamma(&m);
        for k in 0..40 {
            assert!((rc[k] - (g[k] / inst.xi - m[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_instance_is_reproducible() {
        let ens = EnsembleSpec::row_orthogonal(0.5, 10.0).unwrap();
        let prior = Prior::bernoulli_gaussian(0.1).unwrap();
        let a = ProblemInstance::synthesize(&ens, &prior, 32, 5).unwrap();
        let b = ProblemInstance::synthesize(&ens, &prior, 32, 5).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.x_true, b.x_true);
        let ax = a.a.matvec(a.x_true.as_ref().unwrap());
        for ((y, ax), n) in a.y.iter().zip(ax).zip(a.noise.as_ref().unwrap()) {
            assert!((y - ax - n).abs() < 1e-14);
        }
    }
}
