//! Flywheel (reaction-wheel) inverted pendulum.
//!
//! State `x = (θ, φ, θ̇, φ̇)`: pendulum angle from upright, flywheel angle
//! relative to the pendulum, and their rates. Input is the flywheel drive
//! torque `T_w` in N·m.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sdc::{CostWeights, NoiseSpec, PlantDims, PlantModel, SdcEvaluation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// Pendulum mass M_p [kg].
    pub m_p: f64,
    /// Flywheel mass M_w [kg].
    pub m_w: f64,
    /// Pivot to pendulum centre of gravity L_G [m].
    pub l_g: f64,
    /// Pivot to flywheel axis L_e [m].
    pub l_e: f64,
    /// Pendulum inertia I_p [kg·m²].
    pub i_p: f64,
    /// Flywheel inertia I_w [kg·m²].
    pub i_w: f64,
    /// Gravity [m/s²].
    pub g: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { m_p: 0.6, m_w: 0.31, l_g: 0.10, l_e: 0.14, i_p: 0.0023, i_w: 0.001, g: 9.81 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// C_T = (M_p L_G + M_w L_e) g [N·m].
    pub c_t: f64,
    /// I_T = M_p L_G² + M_w L_e² + I_p [kg·m²].
    pub i_t: f64,
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("m_p", self.m_p),
            ("m_w", self.m_w),
            ("l_g", self.l_g),
            ("l_e", self.l_e),
            ("i_p", self.i_p),
            ("i_w", self.i_w),
            ("g", self.g),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("pendulum parameter {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants {
            c_t: (self.m_p * self.l_g + self.m_w * self.l_e) * self.g,
            i_t: self.m_p * self.l_g.powi(2) + self.m_w * self.l_e.powi(2) + self.i_p,
        }
    }

    /// Input column (0, 0, −1/I_T, (I_T + I_w)/(I_w I_T)).
    pub fn input_column(&self) -> [f64; 4] {
        let i_t = self.derived().i_t;
        [0.0, 0.0, -1.0 / i_t, (i_t + self.i_w) / (self.i_w * i_t)]
    }
}

/// sin(z)/z with the removable singularity filled in.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

pub fn dynamics(x: &[f64; 4], u: f64, params: &PendulumParams) -> [f64; 4] {
    let DerivedConstants { c_t, i_t } = params.derived();
    let b = params.input_column();
    let grav = c_t / i_t * x[0].sin();
    [x[2], x[3], grav + b[2] * u, -grav + b[3] * u]
}

/// Kinetic and potential energy in joules.
pub fn energies(x: &[f64; 4], params: &PendulumParams) -> (f64, f64) {
    let DerivedConstants { c_t, i_t } = params.derived();
    let (td, pd) = (x[2], x[3]);
    let kinetic = 0.5 * (i_t + params.i_w) * td * td + params.i_w * td * pd + 0.5 * params.i_w * pd * pd;
    (kinetic, c_t * x[0].cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    /// Coil inductance L_m [H].
    pub l_m: f64,
    /// Coil resistance R_m [Ω].
    pub r_m: f64,
    /// Back-EMF constant K_e [V·s/rad].
    pub k_e: f64,
    /// Torque constant K_t [N·m/A].
    pub k_t: f64,
    /// Gear ratio N_g.
    pub n_g: f64,
}

/// V = L_m di/dt + R_m i + K_e ω_m.
pub fn motor_voltage(i: f64, di_dt: f64, omega_m: f64, mp: &MotorParams) -> f64 {
    mp.l_m * di_dt + mp.r_m * i + mp.k_e * omega_m
}

/// T_w = N_g K_t i.
pub fn torque_from_current(i: f64, mp: &MotorParams) -> f64 {
    mp.n_g * mp.k_t * i
}

/// Current needed for a given flywheel torque.
pub fn current_for_torque(torque: f64, mp: &MotorParams) -> f64 {
    torque / (mp.n_g * mp.k_t)
}

/// The pendulum as an SDC plant with constant output and disturbance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumPlant {
    pub params: PendulumParams,
    pub c_mat: DMatrix<f64>,
    pub d_mat: DMatrix<f64>,
    pub f_dist: DMatrix<f64>,
    pub g_dist: DMatrix<f64>,
}

impl PendulumPlant {
    /// Full-state output C = I₄, D = 0, torque-matched disturbance F = B,
    /// G = 0.
    pub fn new(params: PendulumParams) -> Self {
        let b = DMatrix::from_column_slice(4, 1, &params.input_column());
        Self {
            params,
            c_mat: DMatrix::identity(4, 4),
            d_mat: DMatrix::zeros(4, 1),
            g_dist: DMatrix::zeros(4, 1),
            f_dist: b,
        }
    }

    pub fn b_mat(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, &self.params.input_column())
    }

    /// L = B·σ_L, H = h_level·𝟙 (one scalar noise channel).
    pub fn default_noise(&self, sigma_l: f64, h_level: f64) -> NoiseSpec {
        let r = self.c_mat.nrows();
        NoiseSpec {
            l_mat: self.b_mat() * sigma_l,
            h_mat: DMatrix::from_element(r, 1, h_level),
            ..NoiseSpec::noiseless(4, r, 1)
        }
    }
}

fn arr(x: &DVector<f64>) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

impl PlantModel for PendulumPlant {
    fn dims(&self) -> PlantDims {
        PlantDims {
            state: 4,
            input: 1,
            output: self.c_mat.nrows(),
            disturbance: self.f_dist.ncols(),
            process_noise: 1,
        }
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&dynamics(&arr(x), 0.0, &self.params))
    }

    fn sdc(&self, x: &DVector<f64>) -> SdcEvaluation {
        let DerivedConstants { c_t, i_t } = self.params.derived();
        let k = c_t / i_t * sinc(x[0]);
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(2, 0)] = k;
        a[(3, 0)] = -k;
        SdcEvaluation {
            a_mat: a,
            b_mat: self.b_mat(),
            c_mat: self.c_mat.clone(),
            d_mat: self.d_mat.clone(),
            f_dist: self.f_dist.clone(),
            g_dist: self.g_dist.clone(),
            state: x.clone(),
        }
    }

    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b_mat()
    }

    fn disturbance_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.f_dist.clone()
    }

    fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut dx = DVector::from_row_slice(&dynamics(&arr(x), u[0], &self.params));
        if w.iter().any(|v| *v != 0.0) {
            dx += &self.f_dist * w;
        }
        dx
    }
}

/// Q(x) = diag(1 + x_i²), R = 1, S = I_r with the given γ's.
pub fn benchmark_weights(outputs: usize, gamma1: f64, gamma2: f64) -> CostWeights {
    CostWeights {
        q_of_x: Arc::new(|x: &DVector<f64>| DMatrix::from_diagonal(&x.map(|xi| 1.0 + xi * xi))),
        r_of_x: Arc::new(|_| DMatrix::identity(1, 1)),
        s_of_x: Arc::new(move |_| DMatrix::identity(outputs, outputs)),
        gamma1,
        gamma2,
    }
}

/// Initial state (20°, 0, 0.01 rad/s, 0).
pub fn benchmark_initial_state() -> DVector<f64> {
    DVector::from_vec(vec![20f64.to_radians(), 0.0, 0.01, 0.0])
}
