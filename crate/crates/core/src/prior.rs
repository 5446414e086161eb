//! Scalar signal priors, the posterior-mean denoiser under a Gaussian
//! pseudo-likelihood, and the replica fixed point for the scalar channel.
//!
//! The denoiser works on the tilted density
//! `q(x) ~ p(x) exp(-(v/2)(x - psi)^2)`: its mean is the estimate `eta_v(psi)`
//! and its variance is the per-component contribution to `chi`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::quadrature::Expectation;
use crate::rmt::EnsembleSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// `x = 0` with probability `1 - rho`, otherwise `N(0, 1/rho)`; unit second moment.
    BernoulliGaussian { rho: f64 },
    Gaussian { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::BernoulliGaussian { rho } => write!(f, "bernoulli_gaussian(rho={rho})"),
            Prior::Gaussian { variance } => write!(f, "gaussian(variance={variance})"),
        }
    }
}

impl Prior {
    pub fn bernoulli_gaussian(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(invalid(format!("sparsity rho must lie in (0, 1], got {rho}")));
        }
        Ok(Prior::BernoulliGaussian { rho })
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid(format!("prior variance must be positive, got {variance}")));
        }
        Ok(Prior::Gaussian { variance })
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Prior::BernoulliGaussian { .. } => 1.0,
            Prior::Gaussian { variance } => variance,
        }
    }

    /// The prior as a mixture of zero-mean Gaussians `(weight, variance)`;
    /// a variance of zero is a point mass at the origin.
    pub fn components(&self) -> Vec<(f64, f64)> {
        match *self {
            Prior::BernoulliGaussian { rho } if rho >= 1.0 => vec![(1.0, 1.0)],
            Prior::BernoulliGaussian { rho } => vec![(1.0 - rho, 0.0), (rho, 1.0 / rho)],
            Prior::Gaussian { variance } => vec![(1.0, variance)],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::BernoulliGaussian { rho } => {
                let active = rng.random::<f64>() < rho;
                let z: f64 = rng.sample(StandardNormal);
                if active {
                    z / rho.sqrt()
                } else {
                    0.0
                }
            }
            Prior::Gaussian { variance } => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
        }
    }

    pub fn sample_vec<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Posterior mean and variance of `q_{psi; v}`.
    pub fn denoise(&self, psi: f64, v: f64) -> Result<Posterior> {
        check_args(psi, v)?;
        Ok(self.posterior(psi, v))
    }

    /// `d eta_v / d psi`, differentiated directly rather than through the
    /// variance identity.
    pub fn denoise_derivative(&self, psi: f64, v: f64) -> Result<f64> {
        check_args(psi, v)?;
        Ok(match *self {
            Prior::Gaussian { variance } => variance * v / (1.0 + variance * v),
            Prior::BernoulliGaussian { rho } if rho >= 1.0 => v / (1.0 + v),
            Prior::BernoulliGaussian { rho } => {
                let s = 1.0 / rho;
                let t = BgTerms::new(rho, psi, v);
                let dlogit = psi * v * v * s / (1.0 + s * v);
                let dweight = t.weight * (1.0 - t.weight) * dlogit;
                let dmu = s * v / (1.0 + s * v);
                dweight * t.mu + t.weight * dmu
            }
        })
    }

    /// Unchecked posterior; callers validate `v > 0` once per vector.
    pub(crate) fn posterior(&self, psi: f64, v: f64) -> Posterior {
        match *self {
            Prior::Gaussian { variance } => {
                let denom = 1.0 + variance * v;
                Posterior {
                    mean: variance * v * psi / denom,
                    variance: variance / denom,
                }
            }
            Prior::BernoulliGaussian { rho } if rho >= 1.0 => Posterior {
                mean: v * psi / (1.0 + v),
                variance: 1.0 / (1.0 + v),
            },
            Prior::BernoulliGaussian { rho } => {
                let t = BgTerms::new(rho, psi, v);
                let w = t.weight;
                Posterior {
                    mean: w * t.mu,
                    variance: w * t.var + w * (1.0 - w) * t.mu * t.mu,
                }
            }
        }
    }

    /// `E[(eta_v(x + sqrt(c) z) - x)^2]` for `x ~ p`, `z ~ N(0, 1)`.
    ///
    /// Per mixture component of variance `s`, the field `f = x + sqrt(c) z`
    /// is `N(0, s + c)` and `x | f` is Gaussian with mean `s f / (s + c)` and
    /// variance `s c / (s + c)`, which turns the two-dimensional average into
    /// a one-dimensional one over `f`.
    pub fn mse(&self, v: f64, noise_var: f64, quad: &Expectation) -> f64 {
        self.field_average(noise_var, quad, |f, s, total| {
            let cond_mean = if total > 0.0 { s * f / total } else { 0.0 };
            let cond_var = if total > 0.0 { s * noise_var / total } else { 0.0 };
            let err = self.posterior(f, v).mean - cond_mean;
            err * err + cond_var
        })
    }

    /// `E[Var_q(x | f)]` with the same field law as [`Prior::mse`].
    pub fn mean_posterior_variance(&self, v: f64, noise_var: f64, quad: &Expectation) -> f64 {
        self.field_average(noise_var, quad, |f, _, _| self.posterior(f, v).variance)
    }

    fn field_average<G: Fn(f64, f64, f64) -> f64>(
        &self,
        noise_var: f64,
        quad: &Expectation,
        g: G,
    ) -> f64 {
        self.components()
            .into_iter()
            .map(|(weight, s)| {
                let total = s + noise_var;
                if total <= 0.0 {
                    return weight * g(0.0, s, total);
                }
                let sd = total.sqrt();
                weight * quad.normal(|u| g(sd * u, s, total))
            })
            .sum()
    }
}

fn check_args(psi: f64, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("denoiser precision v must be positive, got {v}")));
    }
    if !psi.is_finite() {
        return Err(Error::Divergence(format!("denoiser input psi = {psi}")));
    }
    Ok(())
}

/// Spike-and-slab posterior pieces: slab weight, slab-conditional mean and variance.
struct BgTerms {
    weight: f64,
    mu: f64,
    var: f64,
}

impl BgTerms {
    fn new(rho: f64, psi: f64, v: f64) -> Self {
        let s = 1.0 / rho;
        let sv = s * v;
        let logit = (rho / (1.0 - rho)).ln() - 0.5 * sv.ln_1p() + psi * psi * v * sv / (2.0 * (1.0 + sv));
        let weight = if logit >= 0.0 {
            1.0 / (1.0 + (-logit).exp())
        } else {
            let e = logit.exp();
            e / (1.0 + e)
        };
        Self {
            weight,
            mu: sv * psi / (1.0 + sv),
            var: s / (1.0 + sv),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicaOptions {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub quadrature: Expectation,
}

impl Default for ReplicaOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iters: 10_000,
            tol: 1e-10,
            quadrature: Expectation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaPoint {
    pub chi: f64,
    pub v: f64,
    pub iterations: usize,
}

/// Solves `chi = E[(x - eta_v(theta + x))^2]`, `theta ~ N(0, 1/v)`,
/// `v = xi - R(chi)` by damped fixed-point iteration from the prior's second moment.
pub fn replica_chi(prior: &Prior, ens: &EnsembleSpec, opts: &ReplicaOptions) -> Result<ReplicaPoint> {
    let precision = |chi: f64| -> Result<f64> {
        let v = ens.xi - ens.r_transform(chi)?;
        if !(v > 0.0) {
            return Err(invalid(format!(
                "v = xi - R(chi) = {v} at chi = {chi}; outside the model's valid regime"
            )));
        }
        Ok(v)
    };
    let mut chi = prior.second_moment();
    for it in 1..=opts.max_iters {
        let v = precision(chi)?;
        let target = prior.mse(v, 1.0 / v, &opts.quadrature);
        let next = (1.0 - opts.damping) * chi + opts.damping * target;
        if !next.is_finite() {
            return Err(Error::Divergence("replica fixed point".into()));
        }
        let delta = (next - chi).abs();
        chi = next;
        if delta < opts.tol {
            return Ok(ReplicaPoint {
                chi,
                v: precision(chi)?,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        last_chi: chi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gaussian_conjugate_values() {
        let p = Prior::gaussian(1.0).unwrap();
        let post = p.denoise(2.0, 1.0).unwrap();
        assert_eq!(post.mean, 1.0);
        assert_eq!(post.variance, 0.5);
    }

    #[test]
    fn symmetric_prior_maps_zero_to_zero() {
        let p = Prior::bernoulli_gaussian(0.1).unwrap();
        for v in [0.01, 1.0, 100.0] {
            assert_eq!(p.denoise(0.0, v).unwrap().mean, 0.0);
        }
        let a = p.denoise(0.7, 3.0).unwrap().mean;
        let b = p.denoise(-0.7, 3.0).unwrap().mean;
        assert_eq!(a, -b);
    }

    #[test]
    fn rejects_nonpositive_precision() {
        let p = Prior::bernoulli_gaussian(0.1).unwrap();
        assert!(p.denoise(1.0, 0.0).is_err());
        assert!(p.denoise(1.0, -1.0).is_err());
        assert!(p.denoise(f64::NAN, 1.0).is_err());
        assert!(p.denoise_derivative(1.0, 0.0).is_err());
    }

    #[test]
    fn derivative_equals_precision_times_variance() {
        for p in [Prior::bernoulli_gaussian(0.1).unwrap(), Prior::gaussian(2.0).unwrap()] {
            for &psi in &[-2.0, -0.3, 0.0, 0.4, 3.0] {
                for &v in &[0.1, 1.0, 30.0] {
                    let d = p.denoise_derivative(psi, v).unwrap();
                    let var = p.denoise(psi, v).unwrap().variance;
                    assert!((d - v * var).abs() < 1e-12 * d.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn vanishing_precision_recovers_prior() {
        let p = Prior::bernoulli_gaussian(0.2).unwrap();
        let post = p.denoise(0.8, 1e-12).unwrap();
        assert!(post.mean.abs() < 1e-10);
        assert!((post.variance - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sampling_second_moment() {
        let p = Prior::bernoulli_gaussian(0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 1_000_000;
        let xs = p.sample_vec(n, &mut rng);
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - m2 * m2) / n as f64).sqrt();
        assert!((m2 - 1.0).abs() < 3.0 * se, "m2={m2} se={se}");
    }

    #[test]
    fn gaussian_mse_closed_form() {
        // Gaussian prior variance 1, field noise c, denoiser precision v:
        // eta = k f with k = v/(1+v); error = (k-1) x + k sqrt(c) z.
        let p = Prior::gaussian(1.0).unwrap();
        let (v, c) = (2.0f64, 0.7f64);
        let k = v / (1.0 + v);
        let want = (k - 1.0).powi(2) + k * k * c;
        for quad in [Expectation::gauss_hermite(61), Expectation::adaptive()] {
            assert!((p.mse(v, c, &quad) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn replica_gaussian_iid_matches_bisection() {
        let p = Prior::gaussian(1.0).unwrap();
        let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
        let point = replica_chi(&p, &ens, &ReplicaOptions::default()).unwrap();
        // chi = 1/(1+v), v = xi*alpha/(alpha + xi*chi): bisection on the scalar equation.
        let g = |chi: f64| chi - 1.0 / (1.0 + 0.5 / (0.5 + chi));
        let (mut lo, mut hi) = (1e-9, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((point.chi - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn replica_weak_observation_gives_prior() {
        let p = Prior::bernoulli_gaussian(0.1).unwrap();
        let ens = EnsembleSpec::iid_gaussian(0.5, 1e-9).unwrap();
        let point = replica_chi(&p, &ens, &ReplicaOptions::default()).unwrap();
        assert!(point.v < 1e-8);
        assert!((point.chi - 1.0).abs() < 1e-6);
    }
}
