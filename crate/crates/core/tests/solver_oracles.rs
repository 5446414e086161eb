use ssmamp_core::instance::ProblemInstance;
use ssmamp_core::prior::Prior;
use ssmamp_core::rmt::EnsembleSpec;
use ssmamp_core::solver::{run, tap_residual, SolverOptions, SolverPath, StopReason, Trajectory};
use ssmamp_core::stats::response_matrix;

fn instance(ens: &EnsembleSpec, k: usize, seed: u64) -> (ProblemInstance, Prior) {
    let prior = Prior::bernoulli_gaussian(0.1).unwrap();
    (ProblemInstance::synthesize(ens, &prior, k, seed).unwrap(), prior)
}

fn fixed_horizon(path: SolverPath, iters: usize) -> SolverOptions {
    SolverOptions {
        path,
        max_iters: iters,
        tol: None,
        record_iterates: true,
        ..SolverOptions::default()
    }
}

fn max_component_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in [
        (a.iterates.as_ref().unwrap(), b.iterates.as_ref().unwrap()),
        (a.fields.as_ref().unwrap(), b.fields.as_ref().unwrap()),
    ] {
        assert_eq!(x.len(), y.len());
        for (u, w) in x.iter().zip(y) {
            for (p, q) in u.iter().zip(w) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    worst
}

#[test]
fn generic_path_reduces_to_amp() {
    for xi in [1.0, 10.0, 100.0] {
        let ens = EnsembleSpec::iid_gaussian(0.5, xi).unwrap();
        let (inst, prior) = instance(&ens, 1000, 17);
        let g = run(&inst, &prior, &ens, &fixed_horizon(SolverPath::Generic, 30)).unwrap();
        let a = run(&inst, &prior, &ens, &fixed_horizon(SolverPath::Amp, 30)).unwrap();
        assert_eq!(g.records.len(), 31, "{:?}", g.stop);
        assert_eq!(a.records.len(), 31, "{:?}", a.stop);
        let gap = max_component_gap(&g, &a);
        assert!(gap <= 1e-8, "xi={xi}: {gap}");
    }
}

#[test]
fn generic_path_matches_row_orthogonal_recursion() {
    for (alpha, xi) in [(0.5, 1.0), (0.5, 10.0), (0.25, 100.0)] {
        let ens = EnsembleSpec::row_orthogonal(alpha, xi).unwrap();
        let (inst, prior) = instance(&ens, 1000, 23);
        let g = run(&inst, &prior, &ens, &fixed_horizon(SolverPath::Generic, 30)).unwrap();
        let s = run(&inst, &prior, &ens, &fixed_horizon(SolverPath::Specialized, 30)).unwrap();
        assert_eq!(g.records.len(), 31, "{:?}", g.stop);
        let gap = max_component_gap(&g, &s);
        assert!(gap <= 1e-6, "alpha={alpha} xi={xi}: {gap}");
    }
}

#[test]
fn recorded_scalars_match_recomputation() {
    let ens = EnsembleSpec::row_orthogonal(0.5, 3.0).unwrap();
    let (inst, prior) = instance(&ens, 400, 5);
    let traj = run(&inst, &prior, &ens, &fixed_horizon(SolverPath::Generic, 20)).unwrap();
    let chi = traj.chi();
    let a = ens.r_inverse_coeffs(chi.len()).unwrap();
    let r: Vec<f64> = chi.iter().map(|&c| ens.r_transform(c).unwrap()).collect();
    // Q(t) = Q(t-1) R(chi(t)), Q(-1) = 1
    let mut q = Vec::new();
    let mut acc = 1.0;
    for rt in &r {
        acc *= rt;
        q.push(acc);
    }
    let q_before = |tau: usize| if tau == 0 { 1.0 } else { q[tau - 1] };
    for (t, rec) in traj.records.iter().enumerate() {
        assert!((rec.q - q[t]).abs() <= 1e-12 * q[t].abs());
        let zeta: f64 = q[t] * (0..=t).map(|tau| a[t - tau] / (chi[tau] * q_before(tau))).sum::<f64>();
        assert!((rec.zeta - zeta).abs() <= 1e-10 * zeta.abs().max(1.0), "t={t}: {} vs {zeta}", rec.zeta);
        let g = if t == 0 { 0.0 } else { chi[t] / chi[t - 1] * r[t - 1] };
        assert!((rec.g_mem - g).abs() <= 1e-14 * g.abs().max(1.0));
        assert!((rec.v - (ens.xi - r[t])).abs() <= 1e-14 * ens.xi);
    }
}

#[test]
fn converged_runs_solve_the_tap_equations() {
    for ens in [
        EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap(),
        EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap(),
    ] {
        let (inst, prior) = instance(&ens, 2000, 31);
        for path in [SolverPath::Generic, SolverPath::preferred_for(&ens)] {
            let opts = SolverOptions {
                path,
                max_iters: 500,
                tol: Some(1e-10),
                ..SolverOptions::default()
            };
            let traj = run(&inst, &prior, &ens, &opts).unwrap();
            assert_eq!(traj.stop, StopReason::Converged, "{ens:?} {path:?}");
            let last = traj.records.last().unwrap();
            let tap = tap_residual(&inst, &traj.estimate, last.chi, &prior, &ens).unwrap();
            assert!(tap.r1 < 1e-6, "{ens:?} {path:?}: r1 = {}", tap.r1);
            assert!(tap.r2 < 1e-6, "{ens:?} {path:?}: r2 = {}", tap.r2);
            // The recorded value uses the path's own gamma, equal up to rounding.
            let recorded = last.tap_r1.unwrap();
            assert!((recorded - tap.r1).abs() <= 1e-12, "{recorded} vs {}", tap.r1);
        }
    }
}

#[test]
fn tap_residual_is_positive_away_from_fixed_points() {
    let ens = EnsembleSpec::iid_gaussian(0.5, 2.0).unwrap();
    let (inst, prior) = instance(&ens, 200, 3);
    let m: Vec<f64> = (0..200).map(|k| ((k * 7919) % 13) as f64 / 13.0 - 0.5).collect();
    let tap = tap_residual(&inst, &m, 0.3, &prior, &ens).unwrap();
    assert!(tap.r1 > 1e-3);
    assert!(tap_residual(&inst, &m, -0.3, &prior, &ens).is_err());
    assert!(tap_residual(&inst, &m[1..], 0.3, &prior, &ens).is_err());
}

#[test]
fn noiseless_truth_has_zero_amp_residual() {
    let ens = EnsembleSpec::iid_gaussian(0.5, 5.0).unwrap();
    let (noisy, _) = instance(&ens, 300, 8);
    let x = noisy.x_true.clone().unwrap();
    let y = noisy.a.matvec(&x);
    let inst = ProblemInstance::new(noisy.a.clone(), y, ens.xi, Some(x.clone())).unwrap();
    let z = inst.residual_correlation(&x);
    assert!(z.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn long_term_response_decays() {
    for ens in [
        EnsembleSpec::iid_gaussian(0.5, 1.0).unwrap(),
        EnsembleSpec::row_orthogonal(0.5, 1.0).unwrap(),
    ] {
        let (inst, prior) = instance(&ens, 1000, 12);
        let opts = SolverOptions {
            max_iters: 200,
            ..SolverOptions::default()
        };
        let traj = run(&inst, &prior, &ens, &opts).unwrap();
        assert!(traj.converged());
        let g: Vec<f64> = traj.records.iter().map(|r| r.g_mem).collect();
        let a = ens.memory_coeffs(g.len()).unwrap();
        let resp = response_matrix(&a, &g);
        let last = g.len() - 1;
        for tau in 0..3 {
            assert!(resp[last][tau].abs() < 1e-6, "{ens:?} G({last},{tau}) = {}", resp[last][tau]);
        }
    }
}
