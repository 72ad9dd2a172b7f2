mod common;

use nalgebra::DMatrix;
use rnqg::pendulum::{benchmark_weights, PendulumParams, PendulumPlant};
use rnqg::sdc::{NoiseSpec, PlantModel};
use rnqg::synthesis::{h2hinf_gain, rnqg_gain, sdre_gain};

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn rnqg_without_noise_is_h2hinf_on_pendulum() {
    let plant = PendulumPlant::new(PendulumParams::default());
    let weights = benchmark_weights(4, 5.0, 5.0);
    let quiet = NoiseSpec::noiseless(4, 4, 1);
    for x in common::pendulum_states(1, 100) {
        let sdc = plant.sdc(&x);
        let a = rnqg_gain(&sdc, &weights, &quiet).unwrap();
        let b = h2hinf_gain(&sdc, &weights).unwrap();
        assert!(rel(&a.k_gain, &b.k_gain) <= 1e-9, "x = {x}");
    }
}

#[test]
fn h2hinf_without_output_weight_or_disturbance_is_sdre() {
    let plant = PendulumPlant::new(PendulumParams::default());
    let weights = benchmark_weights(4, 5.0, 5.0).with_s(DMatrix::zeros(4, 4));
    for x in common::pendulum_states(2, 100) {
        let mut sdc = plant.sdc(&x);
        sdc.f_dist.fill(0.0);
        let a = h2hinf_gain(&sdc, &weights).unwrap();
        let b = sdre_gain(&sdc, &weights).unwrap();
        assert!(rel(&a.k_gain, &b.k_gain) <= 1e-9, "x = {x}");
        assert!(rel(&a.p_mat, &b.p_mat) <= 1e-9);
    }
}

#[test]
fn disturbance_channel_breaks_the_sdre_reduction() {
    // With F ≠ 0 the +γ₁²‖w‖² cost turns w into a second, expensive
    // actuator: P shrinks below the SDRE solution. The reduction needs F = 0.
    let plant = PendulumPlant::new(PendulumParams::default());
    let weights = benchmark_weights(4, 5.0, 5.0).with_s(DMatrix::zeros(4, 4));
    let x = rnqg::pendulum::benchmark_initial_state();
    let sdc = plant.sdc(&x);
    let a = h2hinf_gain(&sdc, &weights).unwrap();
    let b = sdre_gain(&sdc, &weights).unwrap();
    assert!(rel(&a.k_gain, &b.k_gain) > 1e-6);
    let gap = rnqg::linalg::symmetric_eigenvalues(&(&b.p_mat - &a.p_mat));
    assert!(gap[0] >= -1e-9 * b.p_mat.norm());
}
