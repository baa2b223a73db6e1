//! Single-neuron dynamics against the scalar reference integrator.

use ncell_core::testkit::hh_reference as oracle;
use ncell_core::testkit::single_neuron_v;

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn spiking_trajectory_matches_scalar_oracle_at_matched_dt() {
    let dt = 0.025;
    let steps = (200.0 / dt) as usize;
    // The stimulus window is half-open, so the last RK4 stage sees no current.
    let reference = oracle::run(dt, steps, |t| if t < 200.0 { 10.0 } else { 0.0 });
    let net = single_neuron_v(dt, 200.0, 10.0);
    let err = sup_diff(&net, &reference);
    assert!(err < 1e-3, "sup-norm difference {err} mV");
    assert!(oracle::spike_times(&net, dt).len() > 5);
}

#[test]
fn zero_input_stays_at_rest_for_a_second() {
    let v = single_neuron_v(0.025, 1000.0, 0.0);
    let rest = oracle::rest()[0];
    let drift = v.iter().map(|x| (x - rest).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-6, "rest drift {drift} mV");
}

#[test]
fn tonic_ten_microamps_fires_in_gamma_range() {
    let dt = 0.025;
    let v = single_neuron_v(dt, 1000.0, 10.0);
    let sustained = oracle::spike_times(&v, dt).into_iter().filter(|&t| t >= 200.0).count();
    let rate = sustained as f64 / 0.8;
    assert!((50.0..=90.0).contains(&rate), "rate {rate} Hz");
}

#[test]
fn subthreshold_response_converges_with_step_size() {
    // A 2 µA/cm² step stays below the firing threshold, so the trajectory is
    // smooth and the coarse step tracks the fine one closely.
    let fine_dt = 0.001;
    let fine = oracle::run(fine_dt, (100.0 / fine_dt) as usize, |_| 2.0);
    let coarse = single_neuron_v(0.025, 100.0, 2.0);
    let stride = 25;
    let err = coarse
        .iter()
        .enumerate()
        .map(|(k, v)| (v - fine[k * stride]).abs())
        .fold(0.0, f64::max);
    assert!(oracle::spike_times(&fine, fine_dt).is_empty());
    assert!(err < 0.5, "dt refinement error {err} mV");
}

#[test]
fn spike_times_converge_with_step_size() {
    let fine_dt = 0.001;
    let fine = oracle::spike_times(&oracle::run(fine_dt, (100.0 / fine_dt) as usize, |_| 10.0), fine_dt);
    let coarse = oracle::spike_times(&single_neuron_v(0.025, 100.0, 10.0), 0.025);
    assert_eq!(fine.len(), coarse.len());
    for (a, b) in fine.iter().zip(&coarse) {
        // One coarse step of detection granularity plus integration error.
        assert!((a - b).abs() < 0.1, "spike at {a} vs {b}");
    }
}
