//! Sensing matrices: sampling, products, and the invariants each ensemble guarantees.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rmt::{EnsembleKind, EnsembleSpec};
use crate::seed::{stream_rng, STREAM_MATRIX};

/// Dense `N x K` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    pub ensemble: EnsembleSpec,
    pub seed: u64,
}

impl SensingMatrix {
    pub fn from_row_major(
        data: Vec<f64>,
        n_rows: usize,
        n_cols: usize,
        ensemble: EnsembleSpec,
        seed: u64,
    ) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::Dimension(format!(
                "{} values for a {n_rows} x {n_cols} matrix",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
            ensemble,
            seed,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n_cols + k]
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec: length mismatch");
        (0..self.n_rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A^T r`, accumulated row by row in a fixed order.
    pub fn matvec_t(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n_rows, "matvec_t: length mismatch");
        let mut out = vec![0.0; self.n_cols];
        for (i, &ri) in r.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * ri;
            }
        }
        out
    }

    /// `tr(A^T A) / K`.
    pub fn gram_trace_ratio(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>() / self.n_cols as f64
    }

    /// `max |A A^T - (1/alpha) I|` elementwise.
    pub fn row_orthogonality_error(&self) -> f64 {
        let target = 1.0 / self.ensemble.alpha;
        let mut worst = 0.0f64;
        for i in 0..self.n_rows {
            for j in i..self.n_rows {
                let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { target } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    /// Dense `A^T A`, only meant for small test sizes.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.n_cols;
        let mut g = vec![0.0; k * k];
        for i in 0..self.n_rows {
            let row = self.row(i);
            for p in 0..k {
                let rp = row[p];
                if rp == 0.0 {
                    continue;
                }
                for q in 0..k {
                    g[p * k + q] += rp * row[q];
                }
            }
        }
        g
    }
}

/// Number of rows implied by the ensemble's aspect ratio.
pub fn rows_for(alpha: f64, n_cols: usize) -> usize {
    (alpha * n_cols as f64).round() as usize
}

/// Samples `A` from `ens`. Deterministic in `seed`.
pub fn sample_matrix(
    ens: &EnsembleSpec,
    n_rows: usize,
    n_cols: usize,
    seed: u64,
) -> Result<SensingMatrix> {
    if n_cols < 2 {
        return Err(invalid(format!("need at least 2 columns, got {n_cols}")));
    }
    if n_rows == 0 || n_rows != rows_for(ens.alpha, n_cols) {
        return Err(Error::Dimension(format!(
            "{n_rows} rows does not match round(alpha * K) = {} for alpha = {}, K = {n_cols}",
            rows_for(ens.alpha, n_cols),
            ens.alpha
        )));
    }
    let mut rng = stream_rng(seed, STREAM_MATRIX);
    let data = match ens.kind {
        EnsembleKind::IidGaussian => {
            let sd = 1.0 / (n_rows as f64).sqrt();
            (0..n_rows * n_cols)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        EnsembleKind::RowOrthogonal => {
            let q = haar_stiefel(n_cols, n_rows, &mut rng);
            let scale = 1.0 / ens.alpha.sqrt();
            let mut data = Vec::with_capacity(n_rows * n_cols);
            for i in 0..n_rows {
                for k in 0..n_cols {
                    data.push(scale * q[(k, i)]);
                }
            }
            data
        }
        EnsembleKind::Custom { .. } => {
            return Err(invalid(
                "sampling is only available for the iid Gaussian and row-orthogonal ensembles",
            ))
        }
    };
    SensingMatrix::from_row_major(data, n_rows, n_cols, ens.clone(), seed)
}

/// `n` orthonormal columns in `R^k`, uniformly distributed on the Stiefel
/// manifold: thin QR of a Gaussian matrix with each column of `Q` multiplied
/// by the sign of the matching diagonal entry of `R`, so that `R` has a
/// positive diagonal and the factorisation is unique.
pub fn haar_stiefel<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Mat<f64> {
    assert!(n <= k, "cannot fit {n} orthonormal columns in dimension {k}");
    // Draw column by column so the stream does not depend on faer's fill order.
    let draws: Vec<f64> = (0..k * n).map(|_| rng.sample(StandardNormal)).collect();
    let g = Mat::<f64>::from_fn(k, n, |i, j| draws[j * k + i]);
    let qr = g.qr();
    let mut q = qr.compute_thin_Q();
    let r = qr.thin_R();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..k {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Uniform draw from the orthogonal group `O(k)`.
pub fn haar_orthogonal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Mat<f64> {
    haar_stiefel(k, k, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_orthogonal_rows_are_orthogonal() {
        let ens = EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap();
        for seed in 0..3 {
            let a = sample_matrix(&ens, 32, 64, seed).unwrap();
            assert!(a.row_orthogonality_error() < 1e-10);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        let a = sample_matrix(&ens, 10, 20, 42).unwrap();
        let b = sample_matrix(&ens, 10, 20, 42).unwrap();
        let c = sample_matrix(&ens, 10, 20, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        assert!(matches!(sample_matrix(&ens, 11, 20, 0), Err(Error::Dimension(_))));
        assert!(sample_matrix(&ens, 1, 1, 0).is_err());
        let custom = EnsembleSpec::custom(0.5, 1.0, vec![0.0, 1.0]).unwrap();
        assert!(sample_matrix(&custom, 10, 20, 0).is_err());
    }

    #[test]
    fn products_match_dense() {
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        let a = sample_matrix(&ens, 3, 6, 5).unwrap();
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let r = [1.0, -2.0, 0.5];
        let ax = a.matvec(&x);
        let atr = a.matvec_t(&r);
        for i in 0..3 {
            let want: f64 = (0..6).map(|k| a.get(i, k) * x[k]).sum();
            assert!((ax[i] - want).abs() < 1e-14);
        }
        for k in 0..6 {
            let want: f64 = (0..3).map(|i| a.get(i, k) * r[i]).sum();
            assert!((atr[k] - want).abs() < 1e-14);
        }
    }
}
