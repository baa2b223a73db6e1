use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncell_cli::manifest::RunManifest;

const MINIMAL_SPEC: &str = r#"
[domain]
dimension = 2
bounds = [[0.0, 2.0], [0.0, 2.0]]
grid_resolution = [4, 4]

[[classes]]
id = 0
label = "Glu"
synaptic_reversal_mv = 0.0
is_modulatory = false

[[ncells]]
id = 0
nodes = [{ id = 0, class = 0, position = [0.5, 0.5] }, { id = 1, class = 0, position = [1.5, 1.5] }]
psi = [1.0, 1.0]
synapses = [{ pre = 0, post = 1, receptor_class = 0, weight = 1.0, sign = 1 }]

[fields]
rho = [{ class = 0, uniform = true }]
chi = [{ ncell = 0, constant = 1.0 }]

[g]
kind = "sum"
"#;

fn ncell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncell"))
        .args(args)
        .env_remove("NCELL_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trace_values(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().trim().parse().unwrap())
        .collect()
}

fn sim_config(duration: f64, stimulus: Option<f64>) -> String {
    let mut t = format!("dt = 0.025\nduration = {duration}\nseed = 3\nrecord_every = 4\n");
    if let Some(a) = stimulus {
        t += &format!("\n[[stimuli]]\ntarget = {{ neurons = [0] }}\namplitude = {a}\nonset = 0.0\noffset = {duration}\n");
    }
    t
}

#[test]
fn validate_accepts_a_valid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "c.toml", MINIMAL_SPEC);
    let o = ncell(&["validate", s(&spec)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "OK");
}

#[test]
fn validate_reports_unnormalized_density_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = MINIMAL_SPEC.replace("{ class = 0, uniform = true }", "{ class = 0, constant = 0.5 }");
    let spec = write(dir.path(), "c.toml", &bad);
    let o = ncell(&["validate", s(&spec)]);
    assert_eq!(code(&o), 1);
    let out = String::from_utf8_lossy(&o.stdout);
    // 0.5 over an area of 4 integrates to 2.
    assert!(out.contains('2'), "report should state the integral: {out}");
}

#[test]
fn malformed_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "c.toml", "[domain\ndimension = 2\n");
    assert_eq!(code(&ncell(&["validate", s(&spec)])), 2);
    let unknown = write(dir.path(), "u.toml", &MINIMAL_SPEC.replace("[g]", "[g]\nflavour = 1"));
    assert_eq!(code(&ncell(&["validate", s(&unknown)])), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&ncell(&["simulate", "--no-such-flag"])), 2);
}

#[test]
fn zero_stimulus_gives_a_flat_trace_and_a_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "c.toml", MINIMAL_SPEC);
    let cfg = write(dir.path(), "sim.toml", &sim_config(50.0, None));
    let out = dir.path().join("run");
    let o = ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let v = trace_values(&out.join("v_trace.csv"));
    assert_eq!(v.len(), 501);
    assert!(v.iter().all(|x| x.abs() < 1e-9), "max |v| {}", v.iter().fold(0.0f64, |m, x| m.max(x.abs())));

    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 3);
    assert_eq!(m.recompute_digest(), m.config_digest);
    m.verify_inputs().unwrap();
    for f in &m.outputs {
        assert!(out.join(&f.path).exists(), "{} listed but missing", f.path);
    }
    let leftovers: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".partial"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn existing_run_is_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "c.toml", MINIMAL_SPEC);
    let cfg = write(dir.path(), "sim.toml", &sim_config(10.0, None));
    let out = dir.path().join("nested/run");
    assert_eq!(code(&ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&out)])), 0);
    let before = fs::read(out.join("manifest.json")).unwrap();
    assert_eq!(code(&ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&out)])), 2);
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), before);
    assert_eq!(code(&ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&out), "--force"])), 0);
}

#[test]
fn relative_out_goes_under_the_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "c.toml", MINIMAL_SPEC);
    let cfg = write(dir.path(), "sim.toml", &sim_config(10.0, None));
    let o = Command::new(env!("CARGO_BIN_EXE_ncell"))
        .args(["simulate", s(&spec), s(&cfg), "--out", "rel"])
        .env("NCELL_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("rel/manifest.json").exists());
}

#[test]
fn seeds_and_thread_counts_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "c.toml", MINIMAL_SPEC);
    let cfg = write(dir.path(), "sim.toml", &sim_config(40.0, Some(10.0)));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&a), "--threads", "1"])), 0);
    assert_eq!(code(&ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&b), "--threads", "3"])), 0);
    for f in ["record.csv", "v_trace.csv", "spikes.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ma = RunManifest::load(&a.join("manifest.json")).unwrap();
    let mb = RunManifest::load(&b.join("manifest.json")).unwrap();
    assert_eq!(ma.config_digest, mb.config_digest);
    assert_eq!(code(&ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&a), "--force", "--threads", "0"])), 2);
}

#[test]
fn binary_record_round_trips_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let chain = MINIMAL_SPEC
        .replace("position = [1.5, 1.5] }]", "position = [1.5, 1.5] }, { id = 2, class = 0, position = [1.5, 0.5] }]")
        .replace("psi = [1.0, 1.0]", "psi = [1.0, 1.0, 1.0]")
        .replace(
            "weight = 1.0, sign = 1 }]",
            "weight = 1.0, sign = 1 }, { pre = 1, post = 2, receptor_class = 0, weight = 1.0, sign = 1 }]",
        );
    let spec = write(dir.path(), "c.toml", &chain);
    let cfg = write(dir.path(), "sim.toml", &sim_config(400.0, Some(10.0)));
    let run = dir.path().join("run");
    let o = ncell(&["simulate", s(&spec), s(&cfg), "--out", s(&run), "--format", "binary"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ana = dir.path().join("ana");
    let o = ncell(&[
        "analyze",
        s(&run.join("v_trace.csv")),
        "--record",
        s(&run.join("record.ncg")),
        "--spec",
        s(&spec),
        "--source-neuron",
        "0",
        "--out",
        s(&ana),
        "--svg",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rad: serde_json::Value = serde_json::from_str(&fs::read_to_string(ana.join("radiality.json")).unwrap()).unwrap();
    // The excitation runs down the chain.
    assert_eq!(rad["n_active"], 3, "{rad}");
    assert!(ana.join("spectrum.svg").exists() && ana.join("radiality.svg").exists());
}

#[test]
fn analyze_finds_a_fifty_hertz_sine() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t_ms,v_model_mV\n");
    for k in 0..4000 {
        let t = k as f64 * 0.5;
        csv += &format!("{t},{}\n", (2.0 * PI * 50.0 * t / 1000.0).sin());
    }
    let trace = write(dir.path(), "v.csv", &csv);
    let out = dir.path().join("ana");
    let o = ncell(&["analyze", s(&trace), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("spectrum.json")).unwrap()).unwrap();
    let f = rep["dominant_hz"].as_f64().unwrap();
    let bin = rep["bin_width_hz"].as_f64().unwrap();
    assert!((f - 50.0).abs() <= bin, "dominant {f} Hz, bin {bin} Hz");
}

#[test]
fn analyze_rejects_a_short_trace_with_a_named_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write(dir.path(), "v.csv", "t_ms,v_model_mV\n0,0\n0.5,1\n1.0,0\n1.5,-1\n");
    let o = ncell(&["analyze", s(&trace), "--out", s(&dir.path().join("ana"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("SignalTooShort"));
}

#[test]
fn small_demo_emits_spec_frames_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let o = ncell(&["demo-striatum", "--total-neurons", "400", "--duration", "300", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["striatum.toml", "record.ncg", "v_trace.csv", "spectrum.json", "radiality.json", "frames.ncg", "demo_report.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(code(&ncell(&["validate", s(&out.join("striatum.toml"))])), 0);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("demo_report.json")).unwrap()).unwrap();
    assert_eq!(rep["neurons"], 400);
}
