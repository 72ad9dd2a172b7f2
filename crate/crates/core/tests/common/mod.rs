#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rnqg::linalg::symmetrize;
use rnqg::riccati::CareProblem;
use rnqg::simulate::noise::CounterRng;

pub fn randn(rng: &mut CounterRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.next_normal())
}

pub fn spd(rng: &mut CounterRng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = randn(rng, n, n);
    symmetrize(&(&m * m.transpose() / n as f64 + DMatrix::identity(n, n) * shift))
}

/// Random CARE with n ≤ 8, Q ≻ 0, R ≻ 0. Gaussian (A, B) pairs are
/// stabilizable with probability one.
pub fn random_care_problem(rng: &mut CounterRng) -> CareProblem {
    let n = 1 + (rng.next_u64() % 8) as usize;
    let m = 1 + (rng.next_u64() % n as u64) as usize;
    let a = randn(rng, n, n);
    let b = randn(rng, n, m);
    let q = spd(rng, n, 0.1);
    let mr = randn(rng, m, m);
    let r = symmetrize(&(&mr * mr.transpose() / m as f64 + DMatrix::identity(m, m)));
    CareProblem::new(a, b, q, r)
}

/// Uniform pendulum states with |θ| ≤ 1 rad and moderate rates.
pub fn pendulum_states(seed: u64, count: usize) -> Vec<DVector<f64>> {
    let mut rng = CounterRng::new(seed, 3);
    let bounds = [1.0, 3.0, 5.0, 20.0];
    (0..count).map(|_| DVector::from_fn(4, |i, _| rng.uniform_in(-bounds[i], bounds[i]))).collect()
}

/// Damped oscillator ẋ = Ax + Bu used by the LTI checks.
pub fn lti_pair() -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
}

/// Discrete value iteration V_k = min_u [xᵀQx + uᵀRu + V_{k+1}(Ax + Bu)]
/// from V_N = xᵀQx, as quadratic forms. Returns P_N, P_{N-1}, ..., P_0.
pub fn riccati_recursion(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    horizon: usize,
) -> Vec<DMatrix<f64>> {
    let mut out = vec![q.clone()];
    for _ in 0..horizon {
        let p = out.last().unwrap();
        let bp = b.transpose() * p;
        let gain = (r + &bp * b).try_inverse().unwrap() * &bp * a;
        let next = q + a.transpose() * p * a - a.transpose() * p * b * gain;
        out.push(symmetrize(&next));
    }
    out
}

/// Monomial weights (x₁², x₁x₂, x₂²) of xᵀPx.
pub fn quadratic_weights(p: &DMatrix<f64>) -> [f64; 3] {
    [p[(0, 0)], 2.0 * p[(0, 1)], p[(1, 1)]]
}

/// Lightly damped oscillator near 5 rad/s, fast enough that RK4's dt⁴ error
/// stays far above roundoff at dt = 0.0025.
pub fn fast_oscillator() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -25.0, -0.5])
}

/// Least-squares slope of log(err) against log(dt).
pub fn loglog_slope(dts: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
