use ssmamp_core::error::Error;
use ssmamp_core::matrix::{rows_for, sample_matrix};
use ssmamp_core::rmt::{free_cumulants_from_moments, gram_to_coupling_cumulants, EnsembleSpec};
use ssmamp_core::series;

const ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];
const XIS: [f64; 3] = [1.0, 10.0, 100.0];

fn ensembles() -> Vec<EnsembleSpec> {
    let mut out = Vec::new();
    for &alpha in &ALPHAS {
        for &xi in &XIS {
            out.push(EnsembleSpec::iid_gaussian(alpha, xi).unwrap());
            out.push(EnsembleSpec::row_orthogonal(alpha, xi).unwrap());
        }
    }
    out
}

fn omega_grid() -> Vec<f64> {
    (0..=40).map(|i| -0.1 + 0.005 * i as f64).collect()
}

/// Free cumulants of `J` computed from the moments of its two-atom spectrum:
/// `xi (1 - 1/alpha)` with weight `alpha` and `xi` with weight `1 - alpha`.
fn row_orthogonal_cumulants_from_spectrum(alpha: f64, xi: f64, n: usize) -> Vec<f64> {
    let low = xi * (1.0 - 1.0 / alpha);
    let moments: Vec<f64> = (1..=n)
        .map(|k| alpha * low.powi(k as i32) + (1.0 - alpha) * xi.powi(k as i32))
        .collect();
    free_cumulants_from_moments(&moments)
}

#[test]
fn r_vanishes_at_origin() {
    for ens in ensembles() {
        assert_eq!(ens.r_transform(0.0).unwrap(), 0.0, "{ens:?}");
    }
}

#[test]
fn r_of_r_inverse_is_identity() {
    for ens in ensembles() {
        let a = match ens.r_inverse_coeffs(30) {
            Ok(a) => a,
            Err(Error::Degenerate(_)) => {
                assert_eq!(ens.alpha, 1.0);
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        for w in omega_grid() {
            // sum_n a_n w^n
            let inv = w * series::eval(&a, w);
            let back = ens.r_transform(inv).unwrap();
            assert!((back - w).abs() < 1e-9, "{ens:?} w={w} back={back}");
        }
    }
}

#[test]
fn r_inverse_of_r_inside_convergence_disc() {
    for ens in ensembles() {
        let Ok(a) = ens.r_inverse_coeffs(30) else { continue };
        let (xi1, xi2) = ens.xi_pair();
        let radius = match ens.kind {
            ssmamp_core::EnsembleKind::IidGaussian => ens.xi,
            _ => xi1.abs().min(xi2.abs()),
        };
        for w in omega_grid() {
            let Ok(r) = ens.r_transform(w) else { continue };
            if r.abs() > 0.4 * radius {
                continue;
            }
            let back: f64 = a.iter().enumerate().map(|(n, an)| an * r.powi(n as i32 + 1)).sum();
            assert!((back - w).abs() < 1e-9, "{ens:?} w={w}");
        }
    }
}

#[test]
fn closed_form_inverse_coefficients_match_reversion() {
    for ens in ensembles() {
        let closed = match ens.r_inverse_coeffs(20) {
            Ok(a) => a,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        let reverted = ens.r_inverse_coeffs_by_reversion(20).unwrap();
        for (n, (c, r)) in closed.iter().zip(&reverted).enumerate() {
            let scale = c.abs().max(ens.xi.powi(-(n as i32 + 2)));
            assert!(
                (c - r).abs() <= 1e-10 * scale,
                "{ens:?} n={} closed={c} reverted={r}",
                n + 1
            );
        }
    }
}

#[test]
fn row_orthogonal_cumulants_match_spectrum_moments() {
    for &alpha in &[0.25, 0.5, 0.75] {
        for &xi in &[0.5, 1.0, 3.0] {
            let ens = EnsembleSpec::row_orthogonal(alpha, xi).unwrap();
            let series_c = ens.free_cumulants(12).unwrap();
            let moment_c = row_orthogonal_cumulants_from_spectrum(alpha, xi, 12);
            for (k, (a, b)) in series_c.iter().zip(&moment_c).enumerate() {
                let scale = a.abs().max(1.0);
                assert!((a - b).abs() < 1e-9 * scale, "alpha={alpha} xi={xi} k={k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn iid_cumulants_match_marchenko_pastur() {
    for &alpha in &[0.25f64, 0.5, 1.0] {
        for &xi in &[1.0, 10.0] {
            let gram: Vec<f64> = (1..=10).map(|n| alpha.powi(1 - n)).collect();
            let from_gram = gram_to_coupling_cumulants(xi, &gram);
            let direct = EnsembleSpec::iid_gaussian(alpha, xi).unwrap().free_cumulants(10).unwrap();
            for (a, b) in from_gram.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn second_cumulant_by_finite_differences() {
    for &alpha in &[0.25, 0.5] {
        for &xi in &[1.0, 10.0] {
            let ens = EnsembleSpec::iid_gaussian(alpha, xi).unwrap();
            let h = 1e-6 / xi;
            let d = (ens.r_transform(h).unwrap() - ens.r_transform(-h).unwrap()) / (2.0 * h);
            let want = xi * xi / alpha;
            assert!((d - want).abs() < 1e-6 * want, "{d} vs {want}");
            let c = ens.free_cumulants(2).unwrap();
            assert_eq!(c[0], 0.0);
            assert!((c[1] - want).abs() < 1e-12 * want);
        }
    }
}

#[test]
fn custom_b_expansion_matches_closed_forms() {
    for &alpha in &[0.25, 0.5] {
        for &xi in &XIS {
            for ens in [
                EnsembleSpec::iid_gaussian(alpha, xi).unwrap(),
                EnsembleSpec::row_orthogonal(alpha, xi).unwrap(),
            ] {
                let closed = ens.b_coefficients(10).unwrap();
                let custom = EnsembleSpec::custom(alpha, xi, ens.free_cumulants(21).unwrap()).unwrap();
                let numeric = custom.b_coefficients(10).unwrap();
                for n in 1..=10 {
                    for k in 1..=10 {
                        let (c, m) = (closed.get(n, k), numeric.get(n, k));
                        assert!((c - m).abs() <= 1e-8 * c.abs().max(1.0), "{ens:?} ({n},{k}) {c} vs {m}");
                        if c != 0.0 {
                            // Reversion cancellation costs a few digits at high order.
                            assert!((c - m).abs() <= 1e-6 * c.abs(), "{ens:?} ({n},{k}) {c} vs {m}");
                        }
                        assert!((m - numeric.get(k, n)).abs() <= 1e-12 * m.abs());
                    }
                }
            }
        }
    }
}

#[test]
fn row_orthogonal_gram_spectrum() {
    use faer::Mat;
    for seed in [1, 2] {
        let ens = EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap();
        let a = sample_matrix(&ens, 32, 64, seed).unwrap();
        let g = a.gram();
        let mat = Mat::from_fn(64, 64, |i, j| g[i * 64 + j]);
        let mut eig: Vec<f64> = mat.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        eig.sort_by(f64::total_cmp);
        for (i, e) in eig.iter().enumerate() {
            let want = if i < 32 { 0.0 } else { 2.0 };
            assert!((e - want).abs() < 1e-10, "eigenvalue {i} = {e}");
        }
    }
}

#[test]
fn iid_gram_trace_concentrates() {
    let ens = EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap();
    let k = 4000;
    let mut mean = 0.0;
    for seed in 0..10 {
        let a = sample_matrix(&ens, rows_for(0.5, k), k, seed).unwrap();
        let ratio = a.gram_trace_ratio();
        assert!((ratio - 1.0).abs() <= 5.0 / (k as f64).sqrt(), "seed {seed}: {ratio}");
        mean += ratio / 10.0;
    }
    assert!((mean - 1.0).abs() < 0.05);
}

#[test]
fn custom_needs_enough_cumulants() {
    let ens = EnsembleSpec::custom(0.5, 1.0, vec![0.0, 2.0, -1.0]).unwrap();
    assert!(matches!(
        ens.r_inverse_coeffs(5),
        Err(Error::InsufficientCumulants { needed: 6, available: 3 })
    ));
    assert_eq!(ens.r_inverse_coeffs(2).unwrap().len(), 2);
}
