#![allow(dead_code)]

use almost_poisson::expr::Expr;
use almost_poisson::field::{ExprField, PhasePoint};
use almost_poisson::tensor::{ExprTensorField, Variance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VARS: [&str; 4] = ["x1", "x2", "x3", "x4"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random polynomial of total degree ≤ 3 with `terms` monomials and
/// coefficients in [-1, 1].
pub fn random_poly(rng: &mut ChaCha8Rng, vars: &[&str], terms: usize) -> Expr {
    let mut sum = Expr::num(rng.gen_range(-1.0..1.0));
    for _ in 0..terms {
        let mut term = Expr::num(rng.gen_range(-1.0..1.0));
        for _ in 0..rng.gen_range(1..=3) {
            term = term * Expr::var(vars[rng.gen_range(0..vars.len())]);
        }
        sum = sum + term;
    }
    sum
}

/// Antisymmetric polynomial tensor `base + scale · P(x)` with its upper
/// entries returned as expressions.
pub fn random_tensor(
    rng: &mut ChaCha8Rng,
    variance: Variance,
    base: &DMatrix<f64>,
    scale: f64,
) -> (ExprTensorField, DMatrix<Expr>) {
    let m = base.nrows();
    let vars = &VARS[..m];
    let mut entries = DMatrix::from_element(m, m, Expr::num(0.0));
    for i in 0..m {
        for j in i + 1..m {
            let e = Expr::num(base[(i, j)]) + Expr::num(scale) * random_poly(rng, vars, 3);
            entries[(j, i)] = -e.clone();
            entries[(i, j)] = e;
        }
    }
    let t = ExprTensorField::new(variance, vars, |i, j| entries[(i, j)].clone()).unwrap();
    (t, entries)
}

pub fn random_field(rng: &mut ChaCha8Rng, dim: usize) -> ExprField {
    ExprField::new(random_poly(rng, &VARS[..dim], 4), &VARS[..dim]).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> PhasePoint {
    PhasePoint::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `|det T| / max|T_ij|^m`, a scale-free measure of degeneracy.
pub fn relative_det(t: &DMatrix<f64>) -> f64 {
    t.clone().determinant().abs() / t.amax().powi(t.nrows() as i32)
}

/// Fourth-order central difference of equally spaced samples at index `i`.
pub fn five_point(samples: &[f64], i: usize, h: f64) -> f64 {
    (-samples[i + 2] + 8.0 * samples[i + 1] - 8.0 * samples[i - 1] + samples[i - 2]) / (12.0 * h)
}

/// Euler's equations `ṁ = m × ω`, `ω_i = m_i / I_i`.
pub fn euler_rhs(inertia: [f64; 3], m: &[f64]) -> [f64; 3] {
    let w = [m[0] / inertia[0], m[1] / inertia[1], m[2] / inertia[2]];
    [
        m[1] * w[2] - m[2] * w[1],
        m[2] * w[0] - m[0] * w[2],
        m[0] * w[1] - m[1] * w[0],
    ]
}

/// Plain RK4 on `[f64; 3]`, independent of the library integrator.
pub fn euler_rk4(inertia: [f64; 3], m0: [f64; 3], h: f64, steps: usize) -> Vec<[f64; 3]> {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let mut out = vec![m0];
    let mut m = m0;
    for _ in 0..steps {
        let k1 = euler_rhs(inertia, &m);
        let k2 = euler_rhs(inertia, &add(m, k1, h / 2.0));
        let k3 = euler_rhs(inertia, &add(m, k2, h / 2.0));
        let k4 = euler_rhs(inertia, &add(m, k3, h));
        for i in 0..3 {
            m[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(m);
    }
    out
}
