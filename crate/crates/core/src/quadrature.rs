//! Quadrature rules for expectations over Gaussian fields.

use std::f64::consts::PI;

use faer::{Mat, Side};

/// Gauss-Hermite rule rescaled for standard-normal expectations:
/// `E[f(Z)] ~ sum_i w_i f(x_i)` with `sum_i w_i = 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes from the eigenvalues of the Jacobi matrix, each polished by Newton
    /// iteration on the orthonormal Hermite recurrence; weights from the
    /// derivative at the polished node.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Hermite order must be positive");
        let n = order;
        let nf = n as f64;
        let pim4 = PI.powf(-0.25);
        // Physicists' Hermite: off-diagonal sqrt(k/2).
        let jacobi = Mat::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let guesses = jacobi
            .self_adjoint_eigenvalues(Side::Lower)
            .expect("tridiagonal eigenvalue problem converges");
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut z in guesses {
            let mut pp = 0.0;
            for _ in 0..20 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes.push(z * std::f64::consts::SQRT_2);
            weights.push(2.0 / (pp * pp) / PI.sqrt());
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS_K[7] * fc;
    let mut gauss = GK_WEIGHTS_G[3] * fc;
    for j in 0..7 {
        let dx = h * GK_NODES[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS_K[j] * s;
        if j % 2 == 1 {
            gauss += GK_WEIGHTS_G[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Intervals are bisected until each local error estimate is below its share
/// of `abs_tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse<F: FnMut(f64) -> f64>(
        f: &mut F,
        a: f64,
        b: f64,
        whole: (f64, f64),
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (value, err) = whole;
        if err <= tol || depth >= 48 {
            return value;
        }
        let mid = 0.5 * (a + b);
        let left = gk15(f, a, mid);
        let right = gk15(f, mid, b);
        recurse(f, a, mid, left, 0.5 * tol, depth + 1)
            + recurse(f, mid, b, right, 0.5 * tol, depth + 1)
    }
    let whole = gk15(&mut f, a, b);
    recurse(&mut f, a, b, whole, abs_tol, 0)
}

/// `E[f(Z)]` for `Z ~ N(0, 1)` by adaptive integration on `[-12, 12]`,
/// split at the origin.
pub fn normal_expect_adaptive<F: FnMut(f64) -> f64>(mut f: F, abs_tol: f64) -> f64 {
    let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
    let mut g = |u: f64| inv_sqrt_2pi * (-0.5 * u * u).exp() * f(u);
    integrate(&mut g, -12.0, 0.0, 0.5 * abs_tol) + integrate(&mut g, 0.0, 12.0, 0.5 * abs_tol)
}

/// How Gaussian expectations inside the scalar predictors are evaluated.
#[derive(Debug, Clone)]
pub enum Expectation {
    GaussHermite(GaussHermite),
    Adaptive { abs_tol: f64 },
}

impl Expectation {
    pub fn gauss_hermite(order: usize) -> Self {
        Expectation::GaussHermite(GaussHermite::new(order))
    }

    pub fn adaptive() -> Self {
        Expectation::Adaptive { abs_tol: 1e-14 }
    }

    pub fn normal<F: FnMut(f64) -> f64>(&self, f: F) -> f64 {
        match self {
            Expectation::GaussHermite(gh) => gh.expect(f),
            Expectation::Adaptive { abs_tol } => normal_expect_adaptive(f, *abs_tol),
        }
    }
}

impl Default for Expectation {
    fn default() -> Self {
        Expectation::adaptive()
    }
}
