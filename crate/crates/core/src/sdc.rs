//! State-dependent-coefficient (SDC) plants, noise specifications and cost
//! weights.
//!
//! A plant is described by its drift `f(x)` and a factorization
//! `f(x) = A(x)·x` together with the input, output and disturbance maps:
//!
//! ```text
//! ẋ = A(x)x + B(x)u + F(x)w + v
//! y = C(x)x + D(x)u + G(x)w + ε
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{asymmetry, is_symmetric, min_symmetric_eigenvalue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{which} is not symmetric at x = {state:?} (asymmetry {asymmetry:.3e})")]
    NotSymmetric { which: &'static str, state: Vec<f64>, asymmetry: f64 },
    #[error("{which} is not positive {kind} at x = {state:?} (min eigenvalue {min_eigenvalue:.3e})")]
    NotDefinite { which: &'static str, kind: &'static str, state: Vec<f64>, min_eigenvalue: f64 },
    #[error("sample set is empty")]
    NoSamples,
    #[error("process noise is enabled but L = 0")]
    ZeroProcessNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantDims {
    pub state: usize,
    pub input: usize,
    pub output: usize,
    pub disturbance: usize,
    pub process_noise: usize,
}

/// Snapshot of every coefficient matrix at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct SdcEvaluation {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    pub d_mat: DMatrix<f64>,
    pub f_dist: DMatrix<f64>,
    pub g_dist: DMatrix<f64>,
    pub state: DVector<f64>,
}

impl SdcEvaluation {
    pub fn n(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn check_dims(&self) -> Result<(), SdcError> {
        let n = self.a_mat.nrows();
        let m = self.b_mat.ncols();
        let r = self.c_mat.nrows();
        let q = self.f_dist.ncols();
        let want = [
            ("A", self.a_mat.shape(), (n, n)),
            ("B", self.b_mat.shape(), (n, m)),
            ("C", self.c_mat.shape(), (r, n)),
            ("D", self.d_mat.shape(), (r, m)),
            ("F", self.f_dist.shape(), (n, q)),
            ("G", self.g_dist.shape(), (r, q)),
        ];
        for (name, got, expected) in want {
            if got != expected {
                return Err(SdcError::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, expected.0, expected.1
                )));
            }
        }
        if self.state.len() != n {
            return Err(SdcError::DimensionMismatch(format!(
                "state has length {}, expected {n}",
                self.state.len()
            )));
        }
        Ok(())
    }
}

/// Noise intensities used by the synthesis, plus the state-additive noise
/// level and seed used by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Process-noise intensity L (n×p).
    pub l_mat: DMatrix<f64>,
    /// Measurement-noise intensity H (r×p).
    pub h_mat: DMatrix<f64>,
    /// Standard deviation q of the noise added to the state each step.
    pub state_noise_std: f64,
    /// Standard deviation of the measurement noise ε in the recorded output.
    pub measurement_noise_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(n: usize, r: usize, p: usize) -> Self {
        Self {
            l_mat: DMatrix::zeros(n, p),
            h_mat: DMatrix::zeros(r, p),
            state_noise_std: 0.0,
            measurement_noise_std: 0.0,
            seed: 0,
        }
    }

    /// Same spec with L and H zeroed (the H2–H∞ specialization).
    pub fn without_intensities(&self) -> Self {
        Self {
            l_mat: DMatrix::zeros(self.l_mat.nrows(), self.l_mat.ncols()),
            h_mat: DMatrix::zeros(self.h_mat.nrows(), self.h_mat.ncols()),
            ..self.clone()
        }
    }

    pub fn process_noise_active(&self) -> bool {
        self.l_mat.iter().any(|v| *v != 0.0)
    }

    pub fn check(&self, dims: &PlantDims) -> Result<(), SdcError> {
        if self.l_mat.shape() != (dims.state, dims.process_noise)
            || self.h_mat.shape() != (dims.output, dims.process_noise)
        {
            return Err(SdcError::DimensionMismatch(format!(
                "L must be {}x{p} and H {}x{p}",
                dims.state,
                dims.output,
                p = dims.process_noise
            )));
        }
        if !(self.state_noise_std >= 0.0 && self.measurement_noise_std >= 0.0) {
            return Err(SdcError::DimensionMismatch("noise std must be nonnegative".into()));
        }
        Ok(())
    }

    /// Rejects a spec that claims process noise with an all-zero L.
    pub fn require_process_noise(&self) -> Result<(), SdcError> {
        if self.process_noise_active() {
            Ok(())
        } else {
            Err(SdcError::ZeroProcessNoise)
        }
    }
}

pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Weights of the robust cost functional: Q(x), R(x), S(x), γ₁, γ₂.
#[derive(Clone)]
pub struct CostWeights {
    pub q_of_x: MatrixFn,
    pub r_of_x: MatrixFn,
    pub s_of_x: MatrixFn,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl fmt::Debug for CostWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostWeights")
            .field("gamma1", &self.gamma1)
            .field("gamma2", &self.gamma2)
            .finish_non_exhaustive()
    }
}

/// Weights evaluated (and checked) at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEvaluation {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
}

const WEIGHT_SYMMETRY_TOL: f64 = 1e-10;
const WEIGHT_PSD_TOL: f64 = 1e-12;

impl CostWeights {
    pub fn constant(q: DMatrix<f64>, r: DMatrix<f64>, s: DMatrix<f64>, gamma1: f64, gamma2: f64) -> Self {
        Self {
            q_of_x: Arc::new(move |_| q.clone()),
            r_of_x: Arc::new(move |_| r.clone()),
            s_of_x: Arc::new(move |_| s.clone()),
            gamma1,
            gamma2,
        }
    }

    pub fn with_s(&self, s: DMatrix<f64>) -> Self {
        Self { s_of_x: Arc::new(move |_| s.clone()), ..self.clone() }
    }

    /// Evaluates Q, R, S at `x`, checking symmetry, Q,S ⪰ 0 and R ≻ 0.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<WeightEvaluation, SdcError> {
        let q = (self.q_of_x)(x);
        let r = (self.r_of_x)(x);
        let s = (self.s_of_x)(x);
        let state = || x.iter().copied().collect::<Vec<_>>();
        for (which, m, strict) in [("Q", &q, false), ("R", &r, true), ("S", &s, false)] {
            if !m.is_square() {
                return Err(SdcError::DimensionMismatch(format!("{which} is not square")));
            }
            if !is_symmetric(m, WEIGHT_SYMMETRY_TOL) {
                return Err(SdcError::NotSymmetric { which, state: state(), asymmetry: asymmetry(m) });
            }
            let min = min_symmetric_eigenvalue(m);
            let ok = if strict { min > 0.0 } else { min >= -WEIGHT_PSD_TOL * m.norm().max(1.0) };
            if !ok {
                return Err(SdcError::NotDefinite {
                    which,
                    kind: if strict { "definite" } else { "semidefinite" },
                    state: state(),
                    min_eigenvalue: min,
                });
            }
        }
        Ok(WeightEvaluation { q, r, s, gamma1: self.gamma1, gamma2: self.gamma2 })
    }
}

/// A plant in SDC form. Implementations must be pure: evaluating twice at
/// the same state yields identical results.
pub trait PlantModel: Send + Sync {
    fn dims(&self) -> PlantDims;
    /// Drift f(x).
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn sdc(&self, x: &DVector<f64>) -> SdcEvaluation;

    /// Input map B(x); override when cheaper than a full SDC evaluation.
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.sdc(x).b_mat
    }

    /// Disturbance map F(x).
    fn disturbance_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.sdc(x).f_dist
    }

    /// ẋ = f(x) + B(x)u + F(x)w.
    fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut dx = self.drift(x);
        if u.iter().any(|v| *v != 0.0) {
            dx += self.input_map(x) * u;
        }
        if w.iter().any(|v| *v != 0.0) {
            dx += self.disturbance_map(x) * w;
        }
        dx
    }
}

/// Linear time-invariant plant with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub process_noise_dim: usize,
}

impl LinearPlant {
    /// Full-state output, no feedthrough, no disturbance channel.
    pub fn state_feedback(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        Self {
            c: DMatrix::identity(n, n),
            d: DMatrix::zeros(n, m),
            f: DMatrix::zeros(n, 1),
            g: DMatrix::zeros(n, 1),
            a,
            b,
            process_noise_dim: 1,
        }
    }
}

impl PlantModel for LinearPlant {
    fn dims(&self) -> PlantDims {
        PlantDims {
            state: self.a.nrows(),
            input: self.b.ncols(),
            output: self.c.nrows(),
            disturbance: self.f.ncols(),
            process_noise: self.process_noise_dim,
        }
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    fn sdc(&self, x: &DVector<f64>) -> SdcEvaluation {
        SdcEvaluation {
            a_mat: self.a.clone(),
            b_mat: self.b.clone(),
            c_mat: self.c.clone(),
            d_mat: self.d.clone(),
            f_dist: self.f.clone(),
            g_dist: self.g.clone(),
            state: x.clone(),
        }
    }

    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }

    fn disturbance_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.f.clone()
    }
}

/// Outcome of [`validate_plant`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// max over samples of ‖A(x)x − f(x)‖.
    pub max_defect: f64,
    /// max over samples of ‖A(x)x − f(x)‖ / (1 + ‖f(x)‖).
    pub max_relative_defect: f64,
    pub worst_state: Vec<f64>,
    /// ‖f(0)‖.
    pub origin_defect: f64,
    pub origin_violation: bool,
    pub weight_violations: Vec<String>,
    pub passed: bool,
}

pub const FACTORIZATION_TOL: f64 = 1e-10;
pub const ORIGIN_TOL: f64 = 1e-12;

/// Checks the extended-linearization factorization `A(x)x = f(x)`, the
/// origin condition `f(0) = 0`, and (optionally) the weight definiteness at
/// every sample state.
pub fn validate_plant(
    plant: &dyn PlantModel,
    samples: &[DVector<f64>],
    weights: Option<&CostWeights>,
) -> Result<ValidationReport, SdcError> {
    if samples.is_empty() {
        return Err(SdcError::NoSamples);
    }
    let dims = plant.dims();
    let n = dims.state;
    let mut max_defect: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut worst_state = samples[0].iter().copied().collect();
    let mut weight_violations = Vec::new();
    for x in samples {
        if x.len() != n {
            return Err(SdcError::DimensionMismatch(format!(
                "sample has length {}, expected {n}",
                x.len()
            )));
        }
        let sdc = plant.sdc(x);
        sdc.check_dims()?;
        if sdc.b_mat.ncols() != dims.input
            || sdc.c_mat.nrows() != dims.output
            || sdc.f_dist.ncols() != dims.disturbance
        {
            return Err(SdcError::DimensionMismatch(
                "SDC evaluation disagrees with declared plant dimensions".into(),
            ));
        }
        let f = plant.drift(x);
        let defect = (&sdc.a_mat * x - &f).norm();
        let rel = defect / (1.0 + f.norm());
        if rel > max_rel {
            worst_state = x.iter().copied().collect();
        }
        max_defect = max_defect.max(defect);
        max_rel = max_rel.max(rel);
        if let Some(w) = weights {
            if let Err(e) = w.evaluate(x) {
                weight_violations.push(e.to_string());
            }
        }
    }
    let origin_defect = plant.drift(&DVector::zeros(n)).norm();
    let origin_violation = origin_defect > ORIGIN_TOL;
    let passed = max_rel <= FACTORIZATION_TOL && !origin_violation && weight_violations.is_empty();
    Ok(ValidationReport {
        max_defect,
        max_relative_defect: max_rel,
        worst_state,
        origin_defect,
        origin_violation,
        weight_violations,
        passed,
    })
}
