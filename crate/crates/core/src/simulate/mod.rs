//! Fixed-step closed-loop simulation, metrics and trajectory output.

pub mod cases;
pub mod noise;

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sdc::{CostWeights, NoiseSpec, PlantModel};
use crate::synthesis::{
    h2hinf_gain_with, rnqg_gain_with, sdre_gain_with, GainSolution, Scheme, SynthesisOptions,
};
use crate::value_approx::{approx_control, ApproxPolicy, WeightSchedule};
use noise::{streams, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceKind {
    None,
    Step,
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceProfile {
    pub kind: DisturbanceKind,
    /// Onset time [s].
    pub onset: f64,
    /// Amplitude in disturbance units (N·m for the torque-matched channel).
    pub magnitude: f64,
    /// Pulse length [s]; ignored for other kinds.
    #[serde(default)]
    pub duration: f64,
}

impl Default for DisturbanceProfile {
    fn default() -> Self {
        Self { kind: DisturbanceKind::Step, onset: 10.0, magnitude: 0.05, duration: 0.0 }
    }
}

impl DisturbanceProfile {
    pub fn none() -> Self {
        Self { kind: DisturbanceKind::None, ..Self::default() }
    }

    /// Scalar amplitude applied to every disturbance channel at time `t`.
    pub fn amplitude(&self, t: f64) -> f64 {
        // A small slack keeps t = k·dt landing on the intended side of onset.
        let eps = 1e-9;
        match self.kind {
            DisturbanceKind::None => 0.0,
            DisturbanceKind::Step if t + eps >= self.onset => self.magnitude,
            DisturbanceKind::Pulse if t + eps >= self.onset && t + eps < self.onset + self.duration => {
                self.magnitude
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub x0: DVector<f64>,
    pub disturbance: DisturbanceProfile,
    pub noise: NoiseSpec,
    /// Steps between gain re-solves.
    pub resolve_every: usize,
    /// Integrator substeps per control sample. With more than one, the
    /// controller keeps its gain (and the sample's noise draw) over the
    /// sample but its feedback law is re-evaluated at every substep.
    pub substeps: usize,
    /// When set, each sample is further split so that `h·ρ(J) ≤ target`,
    /// with J the closed-loop Jacobian at the start of the sample.
    pub stiffness_target: Option<f64>,
    /// Add the state noise to the plant state instead of only to the
    /// controller's copy.
    pub noise_into_plant: bool,
    pub record_gains: bool,
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= self.dt) {
            return bad("t_end must be at least dt");
        }
        if self.resolve_every == 0 {
            return bad("resolve_every must be at least 1");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if self.stiffness_target.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("stiffness_target must be positive");
        }
        if !(self.disturbance.onset >= 0.0) {
            return bad("disturbance onset must be nonnegative");
        }
        if !(self.noise.state_noise_std >= 0.0 && self.noise.measurement_noise_std >= 0.0) {
            return bad("noise standard deviations must be nonnegative");
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad("x0 must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub noises: Vec<DVector<f64>>,
    pub measurement_noises: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub gains: Option<Vec<DMatrix<f64>>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("controller failure at step {step} (t = {time}): {message}")]
    ControllerFailure { step: usize, time: f64, message: String, partial: Box<TrajectoryRecord> },
    #[error("non-finite state at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64, partial: Box<TrajectoryRecord> },
}

impl SimError {
    pub fn partial(&self) -> Option<&TrajectoryRecord> {
        match self {
            SimError::ControllerFailure { partial, .. } | SimError::NonFiniteState { partial, .. } => Some(partial),
            SimError::InvalidConfig(_) => None,
        }
    }
}

/// A state-feedback law evaluated at the (possibly noisy) measured state.
pub trait Controller: Send {
    fn label(&self) -> &str;
    /// `resolve = false` allows reusing a cached gain.
    fn control(&mut self, x: &DVector<f64>, resolve: bool) -> Result<DVector<f64>, String>;
    fn current_gain(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Sdre,
    SdreApprox,
    H2hinf,
    Rnqg,
    RnqgApprox,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Sdre,
        ControllerKind::SdreApprox,
        ControllerKind::H2hinf,
        ControllerKind::Rnqg,
        ControllerKind::RnqgApprox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Sdre => "sdre",
            ControllerKind::SdreApprox => "sdre-approx",
            ControllerKind::H2hinf => "h2hinf",
            ControllerKind::Rnqg => "rnqg",
            ControllerKind::RnqgApprox => "rnqg-approx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase())
    }

    pub fn is_approx(self) -> bool {
        matches!(self, ControllerKind::SdreApprox | ControllerKind::RnqgApprox)
    }

    /// The exact controller an approximation stands in for.
    pub fn exact(self) -> Self {
        match self {
            ControllerKind::SdreApprox => ControllerKind::Sdre,
            ControllerKind::RnqgApprox => ControllerKind::Rnqg,
            k => k,
        }
    }
}

/// Controller that re-solves a Riccati equation at the measured state.
pub struct GainController {
    pub scheme: Scheme,
    plant: Arc<dyn PlantModel>,
    weights: CostWeights,
    noise: NoiseSpec,
    opts: SynthesisOptions,
    label: String,
    last: Option<GainSolution>,
}

impl GainController {
    pub fn new(
        scheme: Scheme,
        plant: Arc<dyn PlantModel>,
        weights: CostWeights,
        noise: NoiseSpec,
        opts: SynthesisOptions,
    ) -> Self {
        Self { label: scheme.label().to_string(), scheme, plant, weights, noise, opts, last: None }
    }

    pub fn solve_at(&self, x: &DVector<f64>) -> Result<GainSolution, String> {
        let sdc = self.plant.sdc(x);
        let sol = match self.scheme {
            Scheme::Sdre => sdre_gain_with(&sdc, &self.weights, &self.opts),
            Scheme::H2Hinf => h2hinf_gain_with(&sdc, &self.weights, &self.opts),
            Scheme::Rnqg => rnqg_gain_with(&sdc, &self.weights, &self.noise, &self.opts),
        };
        sol.map_err(|e| e.to_string())
    }
}

impl Controller for GainController {
    fn label(&self) -> &str {
        &self.label
    }

    fn control(&mut self, x: &DVector<f64>, resolve: bool) -> Result<DVector<f64>, String> {
        if resolve || self.last.is_none() {
            self.last = Some(self.solve_at(x)?);
        }
        Ok(self.last.as_ref().map(|s| s.control(x)).unwrap_or_default())
    }

    fn current_gain(&self) -> Option<&DMatrix<f64>> {
        self.last.as_ref().map(|s| &s.k_gain)
    }
}

/// ũ = −R⁻¹Bᵀ∇V from a trained schedule.
pub struct ApproxController {
    label: String,
    mode: ApproxMode,
    grad: Vec<f64>,
    u: Vec<f64>,
}

enum ApproxMode {
    Constant(ApproxPolicy),
    Varying { schedule: WeightSchedule, plant: Arc<dyn PlantModel>, r_of_x: crate::sdc::MatrixFn },
}

impl ApproxController {
    /// Precomputes −R⁻¹Bᵀ; valid when R and B do not depend on the state.
    pub fn constant(label: &str, schedule: &WeightSchedule, r: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self, String> {
        let policy = ApproxPolicy::new(schedule, r, b).map_err(|e| e.to_string())?;
        Ok(Self { label: label.into(), grad: vec![0.0; policy.n()], u: vec![0.0; policy.m()], mode: ApproxMode::Constant(policy) })
    }

    pub fn varying(
        label: &str,
        schedule: WeightSchedule,
        plant: Arc<dyn PlantModel>,
        r_of_x: crate::sdc::MatrixFn,
    ) -> Self {
        let (n, m) = (plant.dims().state, plant.dims().input);
        Self { label: label.into(), grad: vec![0.0; n], u: vec![0.0; m], mode: ApproxMode::Varying { schedule, plant, r_of_x } }
    }
}

impl Controller for ApproxController {
    fn label(&self) -> &str {
        &self.label
    }

    fn control(&mut self, x: &DVector<f64>, _resolve: bool) -> Result<DVector<f64>, String> {
        match &self.mode {
            ApproxMode::Constant(policy) => {
                policy.control_into(x.as_slice(), &mut self.grad, &mut self.u);
                Ok(DVector::from_column_slice(&self.u))
            }
            ApproxMode::Varying { schedule, plant, r_of_x } => {
                approx_control(x, schedule, &r_of_x(x), &plant.input_map(x)).map_err(|e| e.to_string())
            }
        }
    }
}

/// Zero input; used for open-loop checks.
pub struct ZeroController(pub usize);

impl Controller for ZeroController {
    fn label(&self) -> &str {
        "zero"
    }
    fn control(&mut self, _x: &DVector<f64>, _resolve: bool) -> Result<DVector<f64>, String> {
        Ok(DVector::zeros(self.0))
    }
}

/// One step of `ẋ = f(x) + B(x)u + F(x)w` with u and w held constant.
pub fn integrate_step(
    plant: &dyn PlantModel,
    integrator: Integrator,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let f = |x: &DVector<f64>| plant.vector_field(x, u, w);
    match integrator {
        Integrator::Euler => x + f(x) * dt,
        Integrator::Rk4 => {
            let k1 = f(x);
            let k2 = f(&(x + &k1 * (0.5 * dt)));
            let k3 = f(&(x + &k2 * (0.5 * dt)));
            let k4 = f(&(x + &k3 * dt));
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    }
}

fn normals(rng: &mut CounterRng, len: usize, std: f64) -> DVector<f64> {
    if std == 0.0 {
        DVector::zeros(len)
    } else {
        DVector::from_fn(len, |_, _| std * rng.next_normal())
    }
}

/// Upper bound on integrator substeps per control sample.
pub const MAX_SUBSTEPS: usize = 1_000_000;

/// ρ of ∂/∂x [f(x) + B(x)κ(x + v) + F(x)w] by central differences, with the
/// controller's gain held.
fn closed_loop_spectral_radius(
    plant: &dyn PlantModel,
    controller: &mut dyn Controller,
    x: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
    noise_into_plant: bool,
) -> Result<f64, String> {
    let n = x.len();
    let mut field = |z: &DVector<f64>| -> Result<DVector<f64>, String> {
        let seen = if noise_into_plant { z.clone() } else { z + v };
        let u = checked_control(controller, &seen, false)?;
        Ok(plant.vector_field(z, &u, w))
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = 1e-6 * x[j].abs().max(1.0);
        let mut zp = x.clone();
        zp[j] += d;
        let mut zm = x.clone();
        zm[j] -= d;
        let col = (field(&zp)? - field(&zm)?) / (2.0 * d);
        jac.set_column(j, &col);
    }
    let eigs = crate::linalg::eigenvalues(&jac).ok_or("closed-loop Jacobian eigenvalues did not converge")?;
    Ok(eigs.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn checked_control(controller: &mut dyn Controller, x: &DVector<f64>, resolve: bool) -> Result<DVector<f64>, String> {
    let u = controller.control(x, resolve)?;
    if u.iter().all(|v| v.is_finite()) {
        Ok(u)
    } else {
        Err("non-finite control".into())
    }
}

/// Runs one closed-loop simulation. Records `steps + 1` samples at
/// `t = k·dt`; the input at step k is held over `[t_k, t_{k+1})`.
pub fn run(plant: &dyn PlantModel, controller: &mut dyn Controller, cfg: &SimConfig) -> Result<TrajectoryRecord, SimError> {
    cfg.validate()?;
    let dims = plant.dims();
    if cfg.x0.len() != dims.state {
        return Err(SimError::InvalidConfig(format!("x0 has length {}, expected {}", cfg.x0.len(), dims.state)));
    }
    let steps = cfg.steps();
    let mut rec = TrajectoryRecord { gains: cfg.record_gains.then(Vec::new), ..Default::default() };
    for v in [&mut rec.states, &mut rec.inputs, &mut rec.outputs, &mut rec.noises, &mut rec.measurement_noises, &mut rec.disturbances] {
        v.reserve(steps + 1);
    }
    let mut state_rng = CounterRng::new(cfg.noise.seed, streams::STATE_NOISE);
    let mut meas_rng = CounterRng::new(cfg.noise.seed, streams::MEASUREMENT_NOISE);
    let mut x = cfg.x0.clone();
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let v = normals(&mut state_rng, dims.state, cfg.noise.state_noise_std);
        let measured = if cfg.noise_into_plant {
            x += &v;
            x.clone()
        } else {
            &x + &v
        };
        let u = match checked_control(controller, &measured, k % cfg.resolve_every == 0) {
            Ok(u) => u,
            Err(message) => return Err(SimError::ControllerFailure { step: k, time: t, message, partial: Box::new(rec) }),
        };
        let w = DVector::from_element(dims.disturbance, cfg.disturbance.amplitude(t));
        let eps = normals(&mut meas_rng, dims.output, cfg.noise.measurement_noise_std);
        let sdc = plant.sdc(&x);
        let y = &sdc.c_mat * &x + &sdc.d_mat * &u + &sdc.g_dist * &w + &eps;
        rec.times.push(t);
        rec.states.push(x.clone());
        if let (Some(g), Some(k_now)) = (rec.gains.as_mut(), controller.current_gain()) {
            g.push(k_now.clone());
        }
        rec.noises.push(v);
        rec.measurement_noises.push(eps);
        rec.outputs.push(y);
        if k < steps {
            let v = &rec.noises[k];
            let substeps = match cfg.stiffness_target {
                None => cfg.substeps,
                Some(target) => {
                    let rho = closed_loop_spectral_radius(plant, controller, &x, v, &w, cfg.noise_into_plant);
                    let needed = match rho {
                        Ok(r) => (cfg.dt * r / target).ceil(),
                        Err(message) => {
                            return Err(SimError::ControllerFailure { step: k, time: t, message, partial: Box::new(rec) })
                        }
                    };
                    if !(needed <= MAX_SUBSTEPS as f64) {
                        let message = format!("closed loop too stiff: {needed:.3e} substeps needed, limit {MAX_SUBSTEPS}");
                        return Err(SimError::ControllerFailure { step: k, time: t, message, partial: Box::new(rec) });
                    }
                    cfg.substeps.max(needed as usize)
                }
            };
            if substeps == 1 {
                x = integrate_step(plant, cfg.integrator, &x, &u, &w, cfg.dt);
            } else {
                let h = cfg.dt / substeps as f64;
                x = integrate_step(plant, cfg.integrator, &x, &u, &w, h);
                for _ in 1..substeps {
                    let seen = if cfg.noise_into_plant { x.clone() } else { &x + v };
                    let u_sub = match checked_control(controller, &seen, false) {
                        Ok(u) => u,
                        Err(message) => {
                            return Err(SimError::ControllerFailure { step: k, time: t, message, partial: Box::new(rec) })
                        }
                    };
                    x = integrate_step(plant, cfg.integrator, &x, &u_sub, &w, h);
                }
            }
        }
        rec.inputs.push(u);
        rec.disturbances.push(w);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { step: k + 1, time: t + cfg.dt, partial: Box::new(rec) });
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iae: f64,
    pub itae: f64,
    pub cef: f64,
}

/// Pendulum error channels θ, θ̇, φ̇.
pub const PENDULUM_CHANNELS: [usize; 3] = [0, 2, 3];

/// IAE, ITAE over the given state channels and CEF = ∫‖u‖²dt, all by the
/// trapezoidal rule on the recorded grid.
pub fn metrics(traj: &TrajectoryRecord, channels: &[usize], desired: &[f64]) -> Metrics {
    let err = |k: usize| -> f64 {
        channels.iter().zip(desired).map(|(&i, &d)| (traj.states[k][i] - d).abs()).sum()
    };
    let mut m = Metrics { iae: 0.0, itae: 0.0, cef: 0.0 };
    for k in 1..traj.len() {
        let (t0, t1) = (traj.times[k - 1], traj.times[k]);
        let h = t1 - t0;
        let (e0, e1) = (err(k - 1), err(k));
        m.iae += 0.5 * h * (e0 + e1);
        m.itae += 0.5 * h * (t0 * e0 + t1 * e1);
        m.cef += 0.5 * h * (traj.inputs[k - 1].norm_squared() + traj.inputs[k].norm_squared());
    }
    m
}

pub fn pendulum_metrics(traj: &TrajectoryRecord) -> Metrics {
    metrics(traj, &PENDULUM_CHANNELS, &[0.0; 3])
}

fn header_group(out: &mut Vec<String>, name: &str, len: usize) {
    if len == 1 && !name.starts_with('x') && !name.starts_with('v') && !name.starts_with('y') {
        out.push(name.into());
    } else {
        out.extend((1..=len).map(|i| format!("{name}{i}")));
    }
}

/// Trajectory CSV: `t,x1..xn,u,w,v1..vn,y1..yr`, values in `{:.16e}`.
pub fn write_csv<W: Write>(traj: &TrajectoryRecord, mut out: W) -> std::io::Result<()> {
    let dim = |v: &[DVector<f64>]| v.first().map_or(0, |x| x.len());
    let mut cols = vec!["t".to_string()];
    header_group(&mut cols, "x", dim(&traj.states));
    header_group(&mut cols, "u", dim(&traj.inputs));
    header_group(&mut cols, "w", dim(&traj.disturbances));
    header_group(&mut cols, "v", dim(&traj.noises));
    header_group(&mut cols, "y", dim(&traj.outputs));
    writeln!(out, "{}", cols.join(","))?;
    let mut line = String::new();
    for k in 0..traj.len() {
        line.clear();
        line.push_str(&format!("{:.16e}", traj.times[k]));
        for group in [&traj.states, &traj.inputs, &traj.disturbances, &traj.noises, &traj.outputs] {
            for v in group[k].iter() {
                line.push_str(&format!(",{v:.16e}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn csv_string(traj: &TrajectoryRecord) -> String {
    let mut buf = Vec::new();
    write_csv(traj, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub case: u8,
    pub controller: String,
    pub seed: u64,
    pub iae: f64,
    pub itae: f64,
    pub cef: f64,
}
