//! Polynomial value-function approximation trained by backward least-squares
//! recursion, and the closed-form controller it induces.
//!
//! For a discrete model `x⁺ = F(x) + G(x)u` and stage cost Θ, step k fits
//!
//! ```text
//! W_kᵀΥ(x⁽ʲ⁾) ≈ Θ(x⁽ʲ⁾, uʲ) + W_{k+1}ᵀΥ(F(x⁽ʲ⁾) + G(x⁽ʲ⁾)uʲ),   W_{N+1} = 0
//! ```
//!
//! over η sampled states, with `uʲ = 0` in drift-only mode and the minimizer
//! of the right-hand side in greedy mode. The online controller is
//! `ũ(x) = −R(x)⁻¹B(x)ᵀ∇V(x)` with `V = W₀ᵀΥ`, which is the exact minimizer
//! of `uᵀ(R/2)u + ∇Vᵀ(f + Bu)`; the default stage cost therefore carries
//! the matching factor ½.

mod basis;
pub mod io;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use basis::{BasisSpec, MAX_DEGREE};

use crate::sdc::{MatrixFn, PlantModel};
use crate::simulate::noise::{streams, CounterRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValueError {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("sample matrix has numerical rank {rank} < basis count {count}")]
    RankDeficientBasis { rank: usize, count: usize },
    #[error("non-finite target at step {step}, sample {sample}")]
    NonFiniteTarget { step: usize, sample: usize },
    #[error("R(x) is singular")]
    SingularR,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Least-squares solution of `𝚼ᵀW ≈ 𝛎` by Householder QR of `𝚼ᵀ`.
///
/// `upsilon` is count×η (one sample per column).
pub fn least_squares_fit(upsilon: &DMatrix<f64>, targets: &DVector<f64>) -> Result<DVector<f64>, ValueError> {
    let (count, eta) = upsilon.shape();
    if targets.len() != eta {
        return Err(ValueError::DimensionMismatch(format!("{eta} samples but {} targets", targets.len())));
    }
    if eta < count {
        return Err(ValueError::RankDeficientBasis { rank: eta, count });
    }
    let qr = upsilon.transpose().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rank = r.diagonal().iter().filter(|v| v.abs() > 1e-11 * diag_max).count();
    if rank < count || diag_max == 0.0 {
        return Err(ValueError::RankDeficientBasis { rank, count });
    }
    let qtb = qr.q().transpose() * targets;
    r.solve_upper_triangular(&qtb)
        .ok_or(ValueError::RankDeficientBasis { rank, count })
}

/// One-step map `x⁺ = F(x) + G(x)u`.
pub trait DiscreteModel: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn drift_step(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_step(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Forward-Euler discretization `F = x + dt·f(x)`, `G = dt·B(x)`.
pub struct EulerModel<'a> {
    pub plant: &'a dyn PlantModel,
    pub dt: f64,
}

impl DiscreteModel for EulerModel<'_> {
    fn n(&self) -> usize {
        self.plant.dims().state
    }
    fn m(&self) -> usize {
        self.plant.dims().input
    }
    fn drift_step(&self, x: &DVector<f64>) -> DVector<f64> {
        x + self.plant.drift(x) * self.dt
    }
    fn input_step(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.plant.input_map(x) * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDiscrete {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl DiscreteModel for LinearDiscrete {
    fn n(&self) -> usize {
        self.a.nrows()
    }
    fn m(&self) -> usize {
        self.b.ncols()
    }
    fn drift_step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn input_step(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// Θ(x, u) = factor·(xᵀQ(x)x + uᵀR(x)u).
#[derive(Clone)]
pub struct StageCost {
    pub q_of_x: MatrixFn,
    pub r_of_x: MatrixFn,
    pub factor: f64,
}

impl StageCost {
    /// ½(xᵀQx + uᵀRu)·dt.
    pub fn sampled(q_of_x: MatrixFn, r_of_x: MatrixFn, dt: f64) -> Self {
        Self { q_of_x, r_of_x, factor: 0.5 * dt }
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let q = (self.q_of_x)(x);
        let r = (self.r_of_x)(x);
        self.factor * (x.dot(&(q * x)) + u.dot(&(r * u)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    DriftOnly,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub horizon: usize,
    pub eta: usize,
    /// Per-state sampling interval.
    pub domain: Vec<(f64, f64)>,
    pub seed: u64,
    pub mode: TrainMode,
    /// Draw a fresh sample set at every step instead of once.
    pub resample_each_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub basis: BasisSpec,
    /// W_N, W_{N−1}, …, W_0.
    pub weights_by_step: Vec<Vec<f64>>,
    pub horizon: usize,
    pub domain: Vec<(f64, f64)>,
    pub eta: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Time step of the discrete model the schedule was trained on.
    pub dt: f64,
    pub converged: bool,
    /// ‖W_k − W_{k+1}‖ for k = N−1, …, 0.
    pub step_changes: Vec<f64>,
}

impl WeightSchedule {
    pub fn final_weights(&self) -> &[f64] {
        self.weights_by_step.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Weights of step k (0 ≤ k ≤ N).
    pub fn weights_at(&self, k: usize) -> Option<&[f64]> {
        self.horizon.checked_sub(k).and_then(|i| self.weights_by_step.get(i)).map(Vec::as_slice)
    }

    /// Schedule holding only W₀ (weights of an externally known value function).
    pub fn from_weights(basis: BasisSpec, w0: Vec<f64>) -> Self {
        let n = basis.n;
        Self {
            basis,
            weights_by_step: vec![w0],
            horizon: 0,
            domain: vec![(0.0, 0.0); n],
            eta: 0,
            seed: 0,
            mode: TrainMode::Greedy,
            dt: 0.0,
            converged: true,
            step_changes: Vec::new(),
        }
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.domain).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }
}

pub const CONVERGENCE_TOL: f64 = 1e-6;

pub fn check_train_config(basis: &BasisSpec, cfg: &TrainConfig) -> Result<(), ValueError> {
    if cfg.horizon == 0 {
        return Err(ValueError::InvalidConfig("horizon must be at least 1".into()));
    }
    if cfg.eta < 2 * basis.count() {
        return Err(ValueError::InvalidConfig(format!(
            "eta = {} is below twice the basis count ({})",
            cfg.eta,
            2 * basis.count()
        )));
    }
    if cfg.domain.len() != basis.n
        || cfg.domain.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
    {
        return Err(ValueError::InvalidConfig("domain needs one finite (lo < hi) pair per state".into()));
    }
    Ok(())
}

fn draw_samples(rng: &mut CounterRng, domain: &[(f64, f64)], eta: usize) -> Vec<DVector<f64>> {
    (0..eta)
        .map(|_| DVector::from_iterator(domain.len(), domain.iter().map(|&(lo, hi)| rng.uniform_in(lo, hi))))
        .collect()
}

/// Minimizer of Θ(x,u) + Wᵀ Υ(F + Gu) by damped Newton; one step is exact
/// for a quadratic basis.
fn greedy_input(
    basis: &BasisSpec,
    w_next: &[f64],
    cost: &StageCost,
    x: &DVector<f64>,
    f_x: &DVector<f64>,
    g_x: &DMatrix<f64>,
) -> DVector<f64> {
    let m = g_x.ncols();
    let r = (cost.r_of_x)(x) * (2.0 * cost.factor);
    let mut u = DVector::zeros(m);
    let mut grad_v = vec![0.0; basis.n];
    let objective = |u: &DVector<f64>| {
        let xp = f_x + g_x * u;
        0.5 * u.dot(&(&r * u)) + basis.value(w_next, xp.as_slice())
    };
    for _ in 0..20 {
        let xp = f_x + g_x * &u;
        basis.gradient_into(w_next, xp.as_slice(), &mut grad_v);
        let gv = DVector::from_column_slice(&grad_v);
        let grad = &r * &u + g_x.transpose() * gv;
        let hv = basis.hessian(w_next, xp.as_slice());
        let hess = &r + g_x.transpose() * hv * g_x;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match r.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => return u,
            },
        };
        let mut t = 1.0;
        let f0 = objective(&u);
        let mut next = &u - &step * t;
        while objective(&next) > f0 && t > 1e-6 {
            t *= 0.5;
            next = &u - &step * t;
        }
        let done = (&next - &u).norm() <= 1e-13 * (1.0 + u.norm());
        u = next;
        if done {
            break;
        }
    }
    u
}

/// Algorithm-1 style backward recursion from `W_{N+1} = 0` to `W_0`.
pub fn train_weights(
    model: &dyn DiscreteModel,
    basis: &BasisSpec,
    cost: &StageCost,
    cfg: &TrainConfig,
    dt: f64,
) -> Result<WeightSchedule, ValueError> {
    check_train_config(basis, cfg)?;
    if model.n() != basis.n {
        return Err(ValueError::DimensionMismatch(format!(
            "model has {} states but basis has {}",
            model.n(),
            basis.n
        )));
    }
    let count = basis.count();
    let mut rng = CounterRng::new(cfg.seed, streams::TRAINING_SAMPLES);
    let mut samples = draw_samples(&mut rng, &cfg.domain, cfg.eta);
    let mut maps: Vec<(DVector<f64>, DMatrix<f64>)> =
        samples.iter().map(|x| (model.drift_step(x), model.input_step(x))).collect();
    let mut upsilon = DMatrix::from_fn(count, cfg.eta, |_, _| 0.0);
    let fill = |ups: &mut DMatrix<f64>, samples: &[DVector<f64>]| {
        for (j, x) in samples.iter().enumerate() {
            basis.eval_into(x.as_slice(), ups.column_mut(j).as_mut_slice());
        }
    };
    fill(&mut upsilon, &samples);

    let mut w_next = vec![0.0; count];
    let mut schedule = Vec::with_capacity(cfg.horizon + 1);
    let mut changes = Vec::with_capacity(cfg.horizon);
    for step in 0..=cfg.horizon {
        if step > 0 && cfg.resample_each_step {
            samples = draw_samples(&mut rng, &cfg.domain, cfg.eta);
            maps = samples.iter().map(|x| (model.drift_step(x), model.input_step(x))).collect();
            fill(&mut upsilon, &samples);
        }
        let targets: Vec<f64> = samples
            .par_iter()
            .zip(maps.par_iter())
            .map(|(x, (f_x, g_x))| {
                let u = match cfg.mode {
                    TrainMode::DriftOnly => DVector::zeros(g_x.ncols()),
                    TrainMode::Greedy => greedy_input(basis, &w_next, cost, x, f_x, g_x),
                };
                let xp = f_x + g_x * &u;
                cost.eval(x, &u) + basis.value(&w_next, xp.as_slice())
            })
            .collect();
        if let Some(j) = targets.iter().position(|v| !v.is_finite()) {
            return Err(ValueError::NonFiniteTarget { step: cfg.horizon - step, sample: j });
        }
        let w = least_squares_fit(&upsilon, &DVector::from_vec(targets))?;
        let w: Vec<f64> = w.iter().copied().collect();
        if step > 0 {
            let diff = w.iter().zip(&w_next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            changes.push(diff);
        }
        w_next = w.clone();
        schedule.push(w);
    }

    let norm = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tail = changes.len().min(3);
    let converged = changes.len() >= 3
        && changes[changes.len() - tail..]
            .iter()
            .zip(&schedule[schedule.len() - tail..])
            .all(|(d, w)| *d <= CONVERGENCE_TOL * (1.0 + norm(w)));
    Ok(WeightSchedule {
        basis: basis.clone(),
        weights_by_step: schedule,
        horizon: cfg.horizon,
        domain: cfg.domain.clone(),
        eta: cfg.eta,
        seed: cfg.seed,
        mode: cfg.mode,
        dt,
        converged,
        step_changes: changes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// `x` lies outside the training domain.
    pub extrapolated: bool,
}

pub fn approx_value(x: &DVector<f64>, schedule: &WeightSchedule) -> ApproxValue {
    let w = schedule.final_weights();
    let mut g = vec![0.0; schedule.basis.n];
    schedule.basis.gradient_into(w, x.as_slice(), &mut g);
    ApproxValue {
        value: schedule.basis.value(w, x.as_slice()),
        gradient: DVector::from_vec(g),
        extrapolated: schedule.horizon > 0 && !schedule.in_domain(x.as_slice()),
    }
}

/// ũ = −R(x)⁻¹ B(x)ᵀ ∇V(x).
pub fn approx_control(
    x: &DVector<f64>,
    schedule: &WeightSchedule,
    r_of_x: &DMatrix<f64>,
    b_of_x: &DMatrix<f64>,
) -> Result<DVector<f64>, ValueError> {
    let grad = approx_value(x, schedule).gradient;
    let rhs = b_of_x.transpose() * grad;
    let sol = r_of_x.clone().cholesky().ok_or(ValueError::SingularR)?.solve(&rhs);
    Ok(-sol)
}

/// Q̃(x) = ½∇VᵀBR⁻¹Bᵀ∇V − ∇Vᵀf, the state cost under which V solves the
/// stationary HJB equation with the ũ above.
pub fn implied_state_cost(
    x: &DVector<f64>,
    schedule: &WeightSchedule,
    plant: &dyn PlantModel,
    r_of_x: &DMatrix<f64>,
) -> Result<f64, ValueError> {
    let grad = approx_value(x, schedule).gradient;
    let bt = plant.input_map(x).transpose() * &grad;
    let rinv_bt = r_of_x.clone().cholesky().ok_or(ValueError::SingularR)?.solve(&bt);
    Ok(0.5 * bt.dot(&rinv_bt) - grad.dot(&plant.drift(x)))
}

/// Precomputed online controller for constant R and B.
#[derive(Debug, Clone)]
pub struct ApproxPolicy {
    basis: BasisSpec,
    weights: Vec<f64>,
    /// −R⁻¹Bᵀ, m×n.
    gain_map: DMatrix<f64>,
}

impl ApproxPolicy {
    pub fn new(schedule: &WeightSchedule, r: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self, ValueError> {
        if b.nrows() != schedule.basis.n || r.shape() != (b.ncols(), b.ncols()) {
            return Err(ValueError::DimensionMismatch("B must be n×m and R m×m".into()));
        }
        let gm = r.clone().cholesky().ok_or(ValueError::SingularR)?.solve(&b.transpose());
        Ok(Self { basis: schedule.basis.clone(), weights: schedule.final_weights().to_vec(), gain_map: -gm })
    }

    pub fn n(&self) -> usize {
        self.basis.n
    }

    pub fn m(&self) -> usize {
        self.gain_map.nrows()
    }

    /// Writes ũ(x) into `u`, using `grad` (length n) as scratch. No allocation.
    pub fn control_into(&self, x: &[f64], grad: &mut [f64], u: &mut [f64]) {
        self.basis.gradient_into(&self.weights, x, grad);
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = (0..grad.len()).map(|j| self.gain_map[(i, j)] * grad[j]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn scalar_cost(q: f64, r: f64) -> StageCost {
        StageCost {
            q_of_x: Arc::new(move |_| DMatrix::from_element(1, 1, q)),
            r_of_x: Arc::new(move |_| DMatrix::from_element(1, 1, r)),
            factor: 1.0,
        }
    }

    fn scalar_cfg(mode: TrainMode, horizon: usize) -> TrainConfig {
        TrainConfig { horizon, eta: 20, domain: vec![(-2.0, 2.0)], seed: 5, mode, resample_each_step: false }
    }

    fn scalar_plant() -> LinearDiscrete {
        LinearDiscrete { a: DMatrix::from_element(1, 1, 0.9), b: DMatrix::from_element(1, 1, 0.1) }
    }

    #[test]
    fn square_system_interpolates() {
        let ups = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 5.0]);
        let nu = DVector::from_vec(vec![4.0, -1.0]);
        let w = least_squares_fit(&ups, &nu).unwrap();
        assert!((ups.transpose() * w - nu).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_rejected() {
        let ups = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let err = least_squares_fit(&ups, &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, ValueError::RankDeficientBasis { rank: 1, count: 2 }));
    }

    #[test]
    fn single_step_fits_stage_cost() {
        let basis = BasisSpec::monomials(1, 2).unwrap();
        let s = train_weights(&scalar_plant(), &basis, &scalar_cost(3.0, 1.0), &scalar_cfg(TrainMode::Greedy, 1), 0.1)
            .unwrap();
        // W_1 fits Θ = 3x² exactly; W_0 = 3 + 0.81·3 − (0.27)²/(1 + 0.03) under the greedy minimizer.
        assert!((s.weights_at(1).unwrap()[0] - 3.0).abs() < 1e-12);
        let expected = 3.0 + 0.81 * 3.0 - 0.27f64.powi(2) / 1.03;
        assert!((s.final_weights()[0] - expected).abs() < 1e-12);
    }

    fn scalar_value_iteration(q: f64, r: f64, greedy: bool) -> f64 {
        let (a, b) = (0.9, 0.1);
        let mut p = 0.0;
        for _ in 0..10_000 {
            p = if greedy { q + a * a * p - (a * b * p).powi(2) / (r + b * b * p) } else { q + a * a * p };
        }
        p
    }

    #[test]
    fn greedy_converges_to_discrete_riccati_value() {
        let basis = BasisSpec::monomials(1, 2).unwrap();
        let s = train_weights(&scalar_plant(), &basis, &scalar_cost(1.0, 1.0), &scalar_cfg(TrainMode::Greedy, 400), 0.1)
            .unwrap();
        assert!(s.converged);
        assert!((s.final_weights()[0] - scalar_value_iteration(1.0, 1.0, true)).abs() < 1e-6);
    }

    #[test]
    fn drift_only_converges_to_geometric_series() {
        let basis = BasisSpec::monomials(1, 2).unwrap();
        let s = train_weights(&scalar_plant(), &basis, &scalar_cost(1.0, 1.0), &scalar_cfg(TrainMode::DriftOnly, 400), 0.1)
            .unwrap();
        // Σ 0.81ᵏ = 1/0.19
        assert!((s.final_weights()[0] - 1.0 / 0.19).abs() < 1e-6);
        assert!((scalar_value_iteration(1.0, 1.0, false) - 1.0 / 0.19).abs() < 1e-9);
    }

    #[test]
    fn eta_precondition() {
        let basis = BasisSpec::monomials(2, 2).unwrap();
        let cfg = TrainConfig { eta: 5, domain: vec![(-1.0, 1.0); 2], ..scalar_cfg(TrainMode::Greedy, 3) };
        assert!(matches!(check_train_config(&basis, &cfg), Err(ValueError::InvalidConfig(_))));
    }

    #[test]
    fn zero_weights_and_scalar_control() {
        let basis = BasisSpec::monomials(1, 2).unwrap();
        let zero = WeightSchedule::from_weights(basis.clone(), vec![0.0]);
        let v = approx_value(&DVector::from_vec(vec![1.3]), &zero);
        assert_eq!((v.value, v.gradient[0]), (0.0, 0.0));
        // ∇V = 2·W·x = 4 at W = 1, x = 2; R = 2, B = 3 → ũ = −6
        let s = WeightSchedule::from_weights(basis, vec![1.0]);
        let u = approx_control(
            &DVector::from_vec(vec![2.0]),
            &s,
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        assert!((u[0] + 6.0).abs() < 1e-14);
    }

    #[test]
    fn policy_matches_general_control() {
        let basis = BasisSpec::monomials(3, 3).unwrap();
        let w: Vec<f64> = (0..basis.count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = WeightSchedule::from_weights(basis, w);
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -0.2, 0.4]);
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let pol = ApproxPolicy::new(&s, &r, &b).unwrap();
        let (mut g, mut u) = ([0.0; 3], [0.0; 2]);
        pol.control_into(x.as_slice(), &mut g, &mut u);
        let reference = approx_control(&x, &s, &r, &b).unwrap();
        assert!((DVector::from_column_slice(&u) - reference).norm() < 1e-12);
    }
}
