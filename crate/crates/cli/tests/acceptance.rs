//! The acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p ncell-cli --test acceptance -- --nocapture` to see the
//! report; the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ncell_core::analysis::{dominant_frequency, lowpass, periodogram};
use ncell_core::averaging::{average, average_naive, precompute_weights, AveragingWeights};
use ncell_core::compartment::{build_compartment, histogram, sample_positions, Compartment, GSpec};
use ncell_core::lattice::SpatialDomain;
use ncell_core::testkit::{hh_reference, random_compartment, single_neuron_v, Limits};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct DemoRun {
    report: serde_json::Value,
    wall: Duration,
}

fn demo(out: &Path, threads: usize, extra: &[&str]) -> DemoRun {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_ncell"))
        .args(["--threads", &threads.to_string(), "demo-striatum", "--out", out.to_str().unwrap()])
        .args(extra)
        .env_remove("NCELL_OUT_ROOT")
        .output()
        .expect("binary runs");
    let wall = start.elapsed();
    assert!(o.status.success(), "demo failed: {}", String::from_utf8_lossy(&o.stderr));
    let report = serde_json::from_str(&fs::read_to_string(out.join("demo_report.json")).unwrap()).unwrap();
    DemoRun { report, wall }
}

fn g_kind(k: usize) -> GSpec {
    match k % 3 {
        0 => GSpec::Sum,
        1 => GSpec::Max,
        _ => GSpec::Const(0.8),
    }
}

fn potentials(c: &Compartment, seed: u64) -> BTreeMap<usize, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    c.neurons.iter().map(|n| (n.id, rng.random_range(-80.0..40.0))).collect()
}

/// Sum of |w_x u_x|: the size of the terms that `average` adds up.
fn term_scale(w: &AveragingWeights, u: &BTreeMap<usize, f64>) -> f64 {
    w.neuron_ids.iter().zip(&w.w).map(|(id, wx)| (wx * u[id]).abs()).sum()
}

fn oscillation_band(run: &DemoRun) -> Outcome {
    let f = run.report["dominant_hz"].as_f64().unwrap();
    let secs = run.wall.as_secs_f64();
    outcome(
        (30.0..=80.0).contains(&f) && secs <= 300.0,
        format!("6400 neurons, 2000 ms: dominant {f:.2} Hz (band [30, 80]), {secs:.0} s (limit 300 s)"),
    )
}

fn radial_propagation(full: &DemoRun, small: &DemoRun) -> Outcome {
    let r = full.report["pearson_r"].as_f64().unwrap_or(f64::NAN);
    let n = full.report["n_active"].as_u64().unwrap();
    let rs = small.report["pearson_r"].as_f64().unwrap_or(f64::NAN);
    let ns = small.report["n_active"].as_u64().unwrap();
    let secs = small.wall.as_secs_f64();
    outcome(
        r >= 0.8 && rs >= 0.7 && secs <= 10.0,
        format!("6400: r = {r:.3} over {n} neurons (>= 0.8); 400: r = {rs:.3} over {ns} neurons (>= 0.7) in {secs:.1} s (<= 10 s)"),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..50 {
        let c = random_compartment(1000 + k as u64, g_kind(k), Limits::default());
        let u = potentials(&c, k as u64);
        let fast = average(&precompute_weights(&c).unwrap(), &u).unwrap();
        let naive = average_naive(&c, &u).unwrap();
        worst = worst.max((fast - naive).abs() / naive.abs().max(f64::MIN_POSITIVE));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs <= 5.0,
        format!("50 compartments: worst relative difference {worst:.2e} (<= 1e-9) in {secs:.2} s (<= 5 s)"),
    )
}

fn averaging_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_lin = 0.0f64;
    let mut worst_chi = 0.0f64;
    for k in 0..100 {
        let c = random_compartment(2000 + k as u64, g_kind(k), Limits::default());
        let w = precompute_weights(&c).unwrap();
        let u1 = potentials(&c, 2 * k as u64);
        let u2 = potentials(&c, 2 * k as u64 + 1);
        let (a, b): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mix: BTreeMap<usize, f64> = u1.iter().map(|(id, x)| (*id, a * x + b * u2[id])).collect();
        let lhs = average(&w, &mix).unwrap();
        let rhs = a * average(&w, &u1).unwrap() + b * average(&w, &u2).unwrap();
        let scale = a.abs() * term_scale(&w, &u1) + b.abs() * term_scale(&w, &u2);
        worst_lin = worst_lin.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));

        let c = random_compartment(3000 + k as u64, GSpec::Sum, Limits::default());
        let factor = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut parts = c.to_parts();
        for f in &mut parts.chi {
            f.iter_mut().for_each(|x| *x *= factor);
        }
        let scaled = build_compartment(parts).unwrap();
        let u = potentials(&c, k as u64);
        let w0 = precompute_weights(&c).unwrap();
        let v0 = average(&w0, &u).unwrap();
        let v1 = average(&precompute_weights(&scaled).unwrap(), &u).unwrap();
        worst_chi = worst_chi.max((v1 - v0).abs() / term_scale(&w0, &u).max(f64::MIN_POSITIVE));
    }
    outcome(
        worst_lin <= 1e-12 && worst_chi <= 1e-12,
        format!("100 cases: linearity {worst_lin:.2e}, chi-scale invariance {worst_chi:.2e} (both <= 1e-12)"),
    )
}

fn hh_correctness() -> Outcome {
    let dt = 0.025;
    let net = single_neuron_v(dt, 200.0, 10.0);
    let reference = hh_reference::run(dt, 8000, |t| if t < 200.0 { 10.0 } else { 0.0 });
    let sup = net.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let rest = hh_reference::rest()[0];
    let drift = single_neuron_v(dt, 1000.0, 0.0).iter().map(|v| (v - rest).abs()).fold(0.0, f64::max);

    let tonic = single_neuron_v(dt, 1000.0, 10.0);
    let sustained = hh_reference::spike_times(&tonic, dt).into_iter().filter(|&t| t >= 200.0).count();
    let rate = sustained as f64 / 0.8;

    outcome(
        sup < 1e-3 && drift < 1e-6 && (50.0..=90.0).contains(&rate),
        format!("sup-norm {sup:.2e} mV (< 1e-3), rest drift {drift:.2e} mV (< 1e-6), 10 uA/cm2 rate {rate:.1} Hz ([50, 90])"),
    )
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let same = |f: &str| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
    let (rec, trace) = (same("record.ncg"), same("v_trace.csv"));
    outcome(
        rec && trace,
        format!("--threads 1 vs 4, seed 1: record.ncg identical: {rec}, v_trace.csv identical: {trace}"),
    )
}

fn distribution_fidelity() -> Outcome {
    let domain = SpatialDomain::cube(2, 10.0, 10);
    let cells = domain.cell_count();
    let ramp: Vec<f64> = (0..cells).map(|k| domain.cell_center(k)[0]).collect();
    let mut spike = vec![0.0; cells];
    spike[37] = 1.0;
    let fields = [("uniform", vec![1.0; cells]), ("linear ramp", ramp), ("single-cell spike", spike)];

    let n = 10_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (name, raw)) in fields.into_iter().enumerate() {
        let total = domain.integrate(&raw);
        let rho: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let pts = sample_positions(&domain, &rho, n, 77 + k as u64).unwrap();
        let counts = histogram(&domain, &pts);
        let mut stat = 0.0;
        let mut df = 0usize;
        let mut stray = 0u64;
        for (c, &obs) in counts.iter().enumerate() {
            let expected = n as f64 * rho[c] * domain.cell_volume();
            if expected > 0.0 {
                stat += (obs as f64 - expected).powi(2) / expected;
                df += 1;
            } else {
                stray += obs;
            }
        }
        df -= 1;
        let ok = if df == 0 {
            stray == 0
        } else {
            let critical = ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - 0.001);
            stray == 0 && stat <= critical
        };
        pass &= ok;
        parts.push(format!("{name}: chi2 {stat:.1} on {df} dof, {stray} draws off support"));
    }
    outcome(pass, format!("{n} draws each, alpha 0.001: {}", parts.join("; ")))
}

fn signal_chain() -> Outcome {
    let fs_hz = 8000.0;
    let n = 16_000;
    let tone = |f: f64| (0..n).map(|k| (2.0 * PI * f * k as f64 / fs_hz).sin()).collect::<Vec<f64>>();
    let interior_peak = |x: &[f64]| x[n / 4..3 * n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let pass_gain = interior_peak(&lowpass(&tone(50.0), fs_hz, 300.0).unwrap());
    let stop_gain = interior_peak(&lowpass(&tone(1000.0), fs_hz, 300.0).unwrap());
    let stop_db = 20.0 * stop_gain.max(1e-300).log10();

    let fs_trace = 2000.0;
    let mut worst_bins = 0.0f64;
    for f0 in [37.5, 50.0, 71.3] {
        let x: Vec<f64> = (0..4000).map(|k| (2.0 * PI * f0 * k as f64 / fs_trace).sin()).collect();
        let s = periodogram(&x, fs_trace).unwrap();
        let d = dominant_frequency(&s, (10.0, 120.0)).unwrap();
        worst_bins = worst_bins.max((d - f0).abs() / s.bin_width());
    }
    outcome(
        (pass_gain - 1.0).abs() <= 0.01 && stop_db <= -40.0 && worst_bins <= 1.0,
        format!(
            "50 Hz gain {pass_gain:.5} (within 1%), 1 kHz at {stop_db:.1} dB (<= -40), tone error {worst_bins:.2} bins (<= 1)"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let (one, four) = (dir.path().join("threads1"), dir.path().join("threads4"));

    let full = demo(&one, 1, &[]);
    let small = demo(&dir.path().join("small"), 1, &["--total-neurons", "400"]);
    demo(&four, 4, &[]);

    let results = [
        ("striatum oscillation band", oscillation_band(&full)),
        ("radial propagation", radial_propagation(&full, &small)),
        ("oracle equivalence", oracle_equivalence()),
        ("averaging algebra", averaging_algebra()),
        ("HH correctness", hh_correctness()),
        ("determinism across thread counts", determinism(&one, &four)),
        ("distribution fidelity", distribution_fidelity()),
        ("signal chain", signal_chain()),
    ];
    let mut failed = Vec::new();
    for (k, (name, o)) in results.iter().enumerate() {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {} ({name}): {verdict} - {}", k + 1, o.detail);
        if !o.pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
