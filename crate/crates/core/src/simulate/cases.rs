//! Benchmark presets for the flywheel pendulum.
//!
//! * Case 1: ideal system, no noise, no disturbance.
//! * Case 2: state noise q = 0.04 and a step disturbance at 10 s.
//! * Case 3: state noise q = 0.4 and a step disturbance at 10 s (SDRE,
//!   H2–H∞ and RNQG only).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;

use super::{
    pendulum_metrics, run, ApproxController, Controller, ControllerKind, DisturbanceProfile, GainController,
    Integrator, Metrics, SimConfig, SimError, TrajectoryRecord,
};
use crate::pendulum::{benchmark_initial_state, benchmark_weights, PendulumParams, PendulumPlant};
use crate::sdc::{CostWeights, MatrixFn, NoiseSpec, PlantModel};
use crate::synthesis::{Scheme, SynthesisOptions};
use crate::value_approx::{
    train_weights, BasisSpec, EulerModel, StageCost, TrainConfig, TrainMode, ValueError, WeightSchedule,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub id: u8,
    pub state_noise_std: f64,
    pub disturbance: DisturbanceProfile,
    pub controllers: &'static [ControllerKind],
}

pub const CASE3_CONTROLLERS: [ControllerKind; 3] = [ControllerKind::Sdre, ControllerKind::H2hinf, ControllerKind::Rnqg];

pub fn case_spec(id: u8) -> Option<CaseSpec> {
    match id {
        1 => Some(CaseSpec {
            id,
            state_noise_std: 0.0,
            disturbance: DisturbanceProfile::none(),
            controllers: &ControllerKind::ALL,
        }),
        2 => Some(CaseSpec {
            id,
            state_noise_std: 0.04,
            disturbance: DisturbanceProfile::default(),
            controllers: &ControllerKind::ALL,
        }),
        3 => Some(CaseSpec {
            id,
            state_noise_std: 0.4,
            disturbance: DisturbanceProfile::default(),
            controllers: &CASE3_CONTROLLERS,
        }),
        _ => None,
    }
}

/// Tunable pieces of the pendulum experiment the benchmark leaves open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignChoices {
    /// Process-noise intensity L = B·σ_L.
    pub sigma_l: f64,
    /// Measurement-noise intensity H = h_level·𝟙.
    pub h_level: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for DesignChoices {
    fn default() -> Self {
        Self { sigma_l: 0.01, h_level: 0.01, gamma1: 5.0, gamma2: 5.0 }
    }
}

/// Everything needed to build controllers and run one pendulum simulation.
#[derive(Clone)]
pub struct Experiment {
    pub plant: Arc<PendulumPlant>,
    pub weights: CostWeights,
    /// L and H used by the RNQG synthesis (the simulated noise levels live
    /// in `sim.noise`).
    pub intensities: NoiseSpec,
    pub synthesis: SynthesisOptions,
    pub sim: SimConfig,
}

/// Training domain (θ, φ, θ̇, φ̇). Fitted value iteration on the wider
/// θ ∈ ±π/3 box diverges on this plant; ±0.3 rad is the widest range that
/// converged reliably across seeds.
pub fn pendulum_domain() -> Vec<(f64, f64)> {
    vec![(-0.3, 0.3), (-PI, PI), (-5.0, 5.0), (-5.0, 5.0)]
}

pub const DEFAULT_STIFFNESS_TARGET: f64 = 1.0;
pub const DEFAULT_TRAIN_HORIZON: usize = 2000;
pub const DEFAULT_TRAIN_DT: f64 = 0.01;
pub const DEFAULT_TRAIN_SEED: u64 = 1;

impl Experiment {
    pub fn new(params: PendulumParams, choices: DesignChoices) -> Self {
        let plant = PendulumPlant::new(params);
        let intensities = plant.default_noise(choices.sigma_l, choices.h_level);
        let weights = benchmark_weights(plant.c_mat.nrows(), choices.gamma1, choices.gamma2);
        let sim = SimConfig {
            dt: 0.01,
            t_end: 20.0,
            integrator: Integrator::Rk4,
            x0: benchmark_initial_state(),
            disturbance: DisturbanceProfile::none(),
            noise: NoiseSpec { state_noise_std: 0.0, ..intensities.clone() },
            resolve_every: 1,
            substeps: 1,
            stiffness_target: Some(DEFAULT_STIFFNESS_TARGET),
            noise_into_plant: false,
            record_gains: false,
        };
        Self { plant: Arc::new(plant), weights, intensities, synthesis: SynthesisOptions::default(), sim }
    }

    /// Applies a case preset (noise level, disturbance, seed).
    pub fn with_case(mut self, case: &CaseSpec, seed: u64) -> Self {
        self.sim.noise.state_noise_std = case.state_noise_std;
        self.sim.noise.seed = seed;
        self.sim.disturbance = case.disturbance;
        self
    }

    pub fn for_case(case: u8, seed: u64) -> Option<Self> {
        Some(Self::new(PendulumParams::default(), DesignChoices::default()).with_case(&case_spec(case)?, seed))
    }

    /// Stage-cost weights the approximation of `kind` is trained on: SDRE
    /// uses (Q, R); RNQG folds the output weight in as (Q + CᵀSC, R + DᵀSD).
    pub fn training_weights(&self, kind: ControllerKind) -> (MatrixFn, MatrixFn) {
        let w = self.weights.clone();
        match kind.exact() {
            ControllerKind::Rnqg => {
                let (c, d) = (self.plant.c_mat.clone(), self.plant.d_mat.clone());
                let w2 = w.clone();
                let q: MatrixFn = Arc::new(move |x: &DVector<f64>| (w.q_of_x)(x) + c.transpose() * (w.s_of_x)(x) * &c);
                let r: MatrixFn = Arc::new(move |x: &DVector<f64>| (w2.r_of_x)(x) + d.transpose() * (w2.s_of_x)(x) * &d);
                (q, r)
            }
            _ => (w.q_of_x.clone(), w.r_of_x.clone()),
        }
    }

    pub fn default_train_config(&self, seed: u64) -> TrainConfig {
        let basis = BasisSpec::monomials(4, 2).expect("quadratic basis over 4 states");
        TrainConfig {
            horizon: DEFAULT_TRAIN_HORIZON,
            eta: 40 * basis.count(),
            domain: pendulum_domain(),
            seed,
            mode: TrainMode::Greedy,
            resample_each_step: false,
        }
    }

    pub fn train(
        &self,
        kind: ControllerKind,
        basis: &BasisSpec,
        cfg: &TrainConfig,
        dt: f64,
    ) -> Result<WeightSchedule, ValueError> {
        let (q, r) = self.training_weights(kind);
        let cost = StageCost::sampled(q, r, dt);
        let model = EulerModel { plant: self.plant.as_ref(), dt };
        train_weights(&model, basis, &cost, cfg, dt)
    }

    pub fn controller(
        &self,
        kind: ControllerKind,
        schedule: Option<&WeightSchedule>,
    ) -> Result<Box<dyn Controller>, String> {
        let plant: Arc<dyn PlantModel> = self.plant.clone();
        let gain = |scheme| {
            Box::new(GainController::new(
                scheme,
                plant.clone(),
                self.weights.clone(),
                self.intensities.clone(),
                self.synthesis,
            )) as Box<dyn Controller>
        };
        Ok(match kind {
            ControllerKind::Sdre => gain(Scheme::Sdre),
            ControllerKind::H2hinf => gain(Scheme::H2Hinf),
            ControllerKind::Rnqg => gain(Scheme::Rnqg),
            ControllerKind::SdreApprox | ControllerKind::RnqgApprox => {
                let schedule = schedule.ok_or_else(|| {
                    format!("{} needs a trained weight schedule; run `train` first", kind.name())
                })?;
                let (_, r) = self.training_weights(kind);
                let origin = DVector::zeros(4);
                let label = if kind == ControllerKind::SdreApprox { "SDRE-approx" } else { "RNQG-approx" };
                Box::new(ApproxController::constant(label, schedule, &r(&origin), &self.plant.b_mat())?)
            }
        })
    }

    pub fn run(
        &self,
        kind: ControllerKind,
        schedule: Option<&WeightSchedule>,
    ) -> Result<(TrajectoryRecord, Metrics), SimError> {
        let mut ctrl = self.controller(kind, schedule).map_err(SimError::InvalidConfig)?;
        let rec = run(self.plant.as_ref(), ctrl.as_mut(), &self.sim)?;
        let m = pendulum_metrics(&rec);
        Ok((rec, m))
    }
}

/// Runs a benchmark case with the default design choices.
pub fn run_case(
    case: u8,
    kind: ControllerKind,
    seed: u64,
    schedule: Option<&WeightSchedule>,
) -> Result<(TrajectoryRecord, Metrics), SimError> {
    let exp = Experiment::for_case(case, seed).ok_or_else(|| SimError::InvalidConfig(format!("unknown case {case}")))?;
    exp.run(kind, schedule)
}
