mod common;

use nalgebra::{DMatrix, DVector};
use rnqg::pendulum::{energies, PendulumParams, PendulumPlant};
use rnqg::sdc::{LinearPlant, NoiseSpec};
use rnqg::simulate::cases::{case_spec, Experiment};
use rnqg::simulate::{
    csv_string, run, ControllerKind, DisturbanceProfile, Integrator, SimConfig, SimError, ZeroController,
};

fn open_loop(x0: DVector<f64>, dt: f64, t_end: f64) -> SimConfig {
    let n = x0.len();
    SimConfig {
        dt,
        t_end,
        integrator: Integrator::Rk4,
        x0,
        disturbance: DisturbanceProfile::none(),
        noise: NoiseSpec::noiseless(n, n, 1),
        resolve_every: 1,
        substeps: 1,
        stiffness_target: None,
        noise_into_plant: false,
        record_gains: false,
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    let a = common::fast_oscillator();
    let plant = LinearPlant::state_feedback(a.clone(), DMatrix::zeros(2, 1));
    let x0 = DVector::from_vec(vec![1.0, -0.5]);
    let exact = (a * 2.0).exp() * &x0;
    let dts = [0.01, 0.005, 0.0025];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let rec = run(&plant, &mut ZeroController(1), &open_loop(x0.clone(), dt, 2.0)).unwrap();
            (rec.final_state().unwrap() - &exact).norm()
        })
        .collect();
    let slope = common::loglog_slope(&dts, &errs);
    assert!((slope - 4.0).abs() <= 0.2, "slope {slope}, errors {errs:?}");
}

#[test]
fn unforced_pendulum_conserves_energy() {
    let params = PendulumParams::default();
    let plant = PendulumPlant::new(params);
    // A swing of 0.3 rad around the hanging equilibrium.
    let x0 = DVector::from_vec(vec![std::f64::consts::PI - 0.3, 0.0, 0.0, 0.0]);
    let rec = run(&plant, &mut ZeroController(1), &open_loop(x0, 0.01, 10.0)).unwrap();
    let total = |x: &DVector<f64>| {
        let (k, p) = energies(&[x[0], x[1], x[2], x[3]], &params);
        k + p
    };
    let e0 = total(&rec.states[0]);
    let drift = rec.states.iter().map(|x| (total(x) - e0).abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-6, "energy drift {drift:.3e} J");
    assert!(rec.states.iter().any(|x| x[2].abs() > 1.0), "pendulum should actually swing");
}

#[test]
fn same_seed_same_csv() {
    let exp = Experiment::for_case(2, 11).unwrap();
    let a = csv_string(&exp.run(ControllerKind::Sdre, None).unwrap().0);
    let b = csv_string(&exp.run(ControllerKind::Sdre, None).unwrap().0);
    assert_eq!(a, b);
    let other = Experiment::for_case(2, 12).unwrap();
    assert_ne!(a, csv_string(&other.run(ControllerKind::Sdre, None).unwrap().0));
}

#[test]
fn case_presets() {
    assert!(case_spec(0).is_none() && case_spec(4).is_none());
    assert_eq!(case_spec(1).unwrap().state_noise_std, 0.0);
    assert_eq!(case_spec(3).unwrap().controllers.len(), 3);
    assert_eq!(case_spec(2).unwrap().disturbance.onset, 10.0);
}

#[test]
fn approximate_controller_needs_schedule() {
    let exp = Experiment::for_case(1, 0).unwrap();
    let err = exp.run(ControllerKind::RnqgApprox, None).unwrap_err();
    assert!(matches!(err, SimError::InvalidConfig(ref m) if m.contains("train")), "{err}");
}

#[test]
fn sdre_regulates_case_one() {
    let exp = Experiment::for_case(1, 0).unwrap();
    let (rec, m) = exp.run(ControllerKind::Sdre, None).unwrap();
    assert_eq!(rec.len(), 2001);
    let late = rec.times.iter().zip(&rec.states).filter(|(t, _)| **t >= 10.0);
    assert!(late.map(|(_, x)| x[0].abs()).fold(0.0, f64::max) < 0.01);
    assert!(m.iae.is_finite() && m.cef > 0.0);
}

#[test]
fn held_input_without_substeps_is_unstable_on_stiff_loop() {
    let mut exp = Experiment::for_case(1, 0).unwrap();
    exp.sim.stiffness_target = None;
    exp.sim.t_end = 2.0;
    let out = exp.run(ControllerKind::Sdre, None);
    let blew_up = match out {
        Err(_) => true,
        Ok((rec, _)) => rec.final_state().unwrap().amax() > 1e3,
    };
    assert!(blew_up);
}

#[test]
fn linear_plant_gain_unchanged_between_resolves() {
    let (a, b) = common::lti_pair();
    let plant = LinearPlant::state_feedback(a, b);
    let mut cfg = open_loop(DVector::from_vec(vec![1.0, 0.0]), 0.01, 0.5);
    cfg.record_gains = true;
    cfg.resolve_every = 10;
    let weights = rnqg::sdc::CostWeights::constant(
        DMatrix::identity(2, 2),
        DMatrix::identity(1, 1),
        DMatrix::zeros(2, 2),
        5.0,
        5.0,
    );
    let plant_arc: std::sync::Arc<dyn rnqg::sdc::PlantModel> = std::sync::Arc::new(plant.clone());
    let mut ctrl = rnqg::simulate::GainController::new(
        rnqg::synthesis::Scheme::Sdre,
        plant_arc,
        weights,
        NoiseSpec::noiseless(2, 2, 1),
        Default::default(),
    );
    let rec = run(&plant, &mut ctrl, &cfg).unwrap();
    let len = rec.len();
    let gains = rec.gains.unwrap();
    assert_eq!(gains.len(), len);
    assert!(gains.windows(2).all(|g| (&g[0] - &g[1]).norm() < 1e-12));
}
