use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ssmamp_core::prior::{replica_chi, Prior, ReplicaOptions};
use ssmamp_core::quadrature::Expectation;
use ssmamp_core::rmt::EnsembleSpec;
use ssmamp_core::solver::chi_update;

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

/// Mean and variance of `q(x) ~ p(x) exp(-(v/2)(x - psi)^2)` by direct
/// integration of the density, with the atom of a spike-and-slab prior added
/// by hand.
fn tilted_moments(prior: &Prior, psi: f64, v: f64) -> (f64, f64) {
    let (atom, slab_weight, slab_var) = match *prior {
        Prior::BernoulliGaussian { rho } => (1.0 - rho, rho, 1.0 / rho),
        Prior::Gaussian { variance } => (0.0, 1.0, variance),
    };
    let log_slab = |x: f64| {
        -0.5 * x * x / slab_var - 0.5 * v * (x - psi) * (x - psi)
            - 0.5 * (2.0 * std::f64::consts::PI * slab_var).ln()
    };
    let centre = v * psi * slab_var / (1.0 + slab_var * v);
    let width = (slab_var / (1.0 + slab_var * v)).sqrt();
    let log_atom = if atom > 0.0 {
        atom.ln() - 0.5 * v * psi * psi
    } else {
        f64::NEG_INFINITY
    };
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

fn grid() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..20 {
        let psi = -4.0 + 8.0 * i as f64 / 19.0;
        for j in 0..20 {
            let v = 10f64.powf(-2.0 + 5.0 * j as f64 / 19.0);
            out.push((psi, v));
        }
    }
    out
}

fn priors() -> Vec<Prior> {
    vec![
        Prior::bernoulli_gaussian(0.1).unwrap(),
        Prior::bernoulli_gaussian(0.3).unwrap(),
        Prior::gaussian(1.0).unwrap(),
        Prior::gaussian(2.5).unwrap(),
    ]
}

#[test]
fn denoiser_matches_density_quadrature() {
    for prior in priors() {
        for (psi, v) in grid() {
            let post = prior.denoise(psi, v).unwrap();
            let (mean, var) = tilted_moments(&prior, psi, v);
            assert!(
                (post.mean - mean).abs() < 1e-8 * mean.abs().max(1.0),
                "{prior} psi={psi} v={v}: {} vs {mean}",
                post.mean
            );
            assert!(
                (post.variance - var).abs() < 1e-8 * var.abs().max(1.0),
                "{prior} psi={psi} v={v}: {} vs {var}",
                post.variance
            );
            assert!(post.variance > 0.0);
        }
    }
}

#[test]
fn spec_example_point() {
    let prior = Prior::bernoulli_gaussian(0.1).unwrap();
    let post = prior.denoise(0.5, 10.0).unwrap();
    let (mean, var) = tilted_moments(&prior, 0.5, 10.0);
    assert!((post.mean - mean).abs() < 1e-10);
    assert!((post.variance - var).abs() < 1e-10);
}

#[test]
fn derivative_matches_finite_differences() {
    for prior in priors() {
        for (psi, v) in grid() {
            let analytic = prior.denoise_derivative(psi, v).unwrap();
            let h = 1e-3 / (1.0 + v).sqrt();
            let d = |h: f64| {
                (prior.denoise(psi + h, v).unwrap().mean - prior.denoise(psi - h, v).unwrap().mean)
                    / (2.0 * h)
            };
            let fd = (4.0 * d(h / 2.0) - d(h)) / 3.0;
            assert!(
                (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-9),
                "{prior} psi={psi} v={v}: fd {fd} analytic {analytic}"
            );
            let var = prior.denoise(psi, v).unwrap().variance;
            assert!((analytic - v * var).abs() <= 1e-12 * analytic.abs().max(1e-300));
        }
    }
}

#[test]
fn gaussian_replica_point_matches_bisection() {
    let prior = Prior::gaussian(1.0).unwrap();
    let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
    let point = replica_chi(&prior, &ens, &ReplicaOptions::default()).unwrap();
    // chi = 1/(1 + v), v = xi alpha / (alpha + xi chi)
    let f = |chi: f64| chi - 1.0 / (1.0 + 0.5 / (0.5 + chi));
    let (mut lo, mut hi) = (1e-6, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((point.chi - lo).abs() < 1e-9, "{} vs {lo}", point.chi);
    assert!((point.v - 0.5 / (0.5 + lo)).abs() < 1e-9);
}

#[test]
fn replica_point_insensitive_to_quadrature_refinement() {
    let ensembles = [
        EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap(),
        EnsembleSpec::row_orthogonal(0.5, 10.0).unwrap(),
        EnsembleSpec::iid_gaussian(0.25, 100.0).unwrap(),
    ];
    let chi_with = |prior: &Prior, ens: &EnsembleSpec, quadrature| {
        let opts = ReplicaOptions {
            quadrature,
            ..ReplicaOptions::default()
        };
        replica_chi(prior, ens, &opts).unwrap().chi
    };
    // Smooth integrands: Gauss-Hermite order 61 and 101 agree.
    let gaussian = Prior::gaussian(1.0).unwrap();
    for ens in &ensembles {
        let a = chi_with(&gaussian, ens, Expectation::gauss_hermite(61));
        let b = chi_with(&gaussian, ens, Expectation::gauss_hermite(101));
        assert!((a - b).abs() < 1e-8, "{ens:?}: {a} vs {b}");
    }
    // Spike-and-slab integrands have a sharp posterior-weight transition;
    // the adaptive rule is refined by tightening its tolerance instead.
    for rho in [0.1, 0.3] {
        let prior = Prior::bernoulli_gaussian(rho).unwrap();
        for ens in &ensembles {
            let coarse = chi_with(&prior, ens, Expectation::Adaptive { abs_tol: 1e-10 });
            let fine = chi_with(&prior, ens, Expectation::Adaptive { abs_tol: 1e-15 });
            assert!((coarse - fine).abs() < 1e-8, "{ens:?} rho={rho}: {coarse} vs {fine}");
        }
    }
}

#[test]
fn replica_point_agrees_with_monte_carlo() {
    let prior = Prior::bernoulli_gaussian(0.1).unwrap();
    let ens = EnsembleSpec::row_orthogonal(0.5, 100.0).unwrap();
    let point = replica_chi(&prior, &ens, &ReplicaOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000_000;
    let sd = 1.0 / point.v.sqrt();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = prior.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let e = prior.denoise(x + sd * z, point.v).unwrap().mean - x;
        s1 += e * e;
        s2 += e * e * e * e;
    }
    let mean = s1 / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - point.chi).abs() < 3.0 * se, "mc {mean} +- {se}, replica {}", point.chi);
}

#[test]
fn chi_update_on_replica_law_field() {
    let prior = Prior::bernoulli_gaussian(0.1).unwrap();
    let ens = EnsembleSpec::iid_gaussian(0.5, 10.0).unwrap();
    let point = replica_chi(&prior, &ens, &ReplicaOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1_000_000;
    let sd = 1.0 / point.v.sqrt();
    let psi: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            prior.sample(&mut rng) + sd * z
        })
        .collect();
    let vars: Vec<f64> = psi.iter().map(|&p| prior.denoise(p, point.v).unwrap().variance).collect();
    let mean = vars.iter().sum::<f64>() / n as f64;
    let sd_mean = (vars.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 * n as f64)).sqrt();
    let chi = chi_update(&prior, &psi, point.v).unwrap();
    assert!((chi - mean).abs() < 1e-12);
    assert!((chi - point.chi).abs() < 4.0 * sd_mean, "{chi} vs {} (se {sd_mean})", point.chi);
}

#[test]
fn no_observation_limit() {
    let prior = Prior::bernoulli_gaussian(0.2).unwrap();
    let psi = [0.3, -2.0, 5.0];
    assert!((chi_update(&prior, &psi, 1e-14).unwrap() - 1.0).abs() < 1e-9);
}
