//! The four subcommands. Each returns its manifest or report; printing and
//! exit codes are left to the binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ncell_core::analysis::{
    activation_latencies, analyze_spectrum, latencies_within, radiality_score, AnalysisError, RadialityReport,
    SpectrumReport,
};
use ncell_core::averaging::{average_trace, precompute_weights};
use ncell_core::compartment::{Compartment, ValidationReport};
use ncell_core::dynamics::{simulate as run_dynamics, ModelParameters, SimulationConfig, SimulationRecord};
use ncell_core::io::{
    read_record_binary, read_record_csv, read_trace_csv, write_record_binary, write_record_csv, write_spikes_json,
    write_trace_csv, write_weights_csv,
};
use ncell_core::lattice::{write_grid, Point};
use ncell_core::specfile::{load_spec, SpecError};
use ncell_core::striatum::{build_striatum, demo_config, StriatumParams};

use crate::manifest::{config_digest, now_rfc3339, FileDigest, RunManifest, TOOL_VERSION};
use crate::output::OutputDir;
use crate::plot::{line_plot, scatter_plot};
use crate::{CliError, OUT_ROOT_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Binary,
}

/// Relative output paths are placed under `$NCELL_OUT_ROOT` when it is set.
pub fn resolve_out(out: Option<PathBuf>, command: &str) -> PathBuf {
    let out = out.unwrap_or_else(|| PathBuf::from("ncell-out").join(command));
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out,
    }
}

pub fn load_compartment(path: &Path) -> Result<Compartment, CliError> {
    let parts = load_spec(path).map_err(|e| match e {
        SpecError::Parse(_) => CliError::Parse(format!("{}: {e}", path.display())),
        SpecError::Io { .. } => CliError::Usage(e.to_string()),
        other => CliError::Domain(format!("{}: {other}", path.display())),
    })?;
    Compartment::from_parts(parts).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn validate(spec: &Path) -> Result<ValidationReport, CliError> {
    Ok(load_compartment(spec)?.validate())
}

fn input_digest(path: &Path) -> Result<FileDigest, CliError> {
    let abs = fs::canonicalize(path).map_err(CliError::io(format!("resolving {}", path.display())))?;
    FileDigest::of(&abs, abs.to_string_lossy()).map_err(CliError::io(format!("hashing {}", path.display())))
}

fn analysis_err(e: AnalysisError) -> CliError {
    let debug = format!("{e:?}");
    let name = debug.split(['(', ' ', '{']).next().unwrap_or("AnalysisError");
    CliError::Domain(format!("{name}: {e}"))
}

struct PipelineOutput {
    record: SimulationRecord,
    v: Vec<f64>,
}

/// Simulate, average and write the record, `v_trace.csv`, spikes and weights.
fn run_pipeline(
    c: &Compartment,
    cfg: &SimulationConfig,
    out: &mut OutputDir,
    format: RecordFormat,
) -> Result<PipelineOutput, CliError> {
    let record = run_dynamics(c, cfg, &ModelParameters::default()).map_err(CliError::domain)?;
    let weights = precompute_weights(c).map_err(CliError::domain)?;
    let v = average_trace(&weights, &record).map_err(CliError::domain)?;
    match format {
        RecordFormat::Csv => out.write_with("record.csv", |w| write_record_csv(w, &record).map_err(CliError::domain))?,
        RecordFormat::Binary => {
            out.write_with("record.ncg", |w| write_record_binary(w, &record).map_err(CliError::domain))?
        }
    }
    out.write_with("v_trace.csv", |w| write_trace_csv(w, &record.times, &v).map_err(CliError::domain))?;
    out.write_with("spikes.json", |w| write_spikes_json(w, &record).map_err(CliError::domain))?;
    out.write_with("weights.csv", |w| write_weights_csv(w, &weights).map_err(CliError::domain))?;
    Ok(PipelineOutput { record, v })
}

pub struct SimulateArgs {
    pub spec: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub force: bool,
    pub format: RecordFormat,
    pub svg: bool,
    pub threads: Option<usize>,
}

pub fn load_sim_config(path: &Path) -> Result<SimulationConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn simulate(args: &SimulateArgs) -> Result<RunManifest, CliError> {
    let started_at = now_rfc3339();
    let c = load_compartment(&args.spec)?;
    let mut cfg = load_sim_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.check().map_err(CliError::domain)?;
    let inputs = vec![input_digest(&args.spec)?, input_digest(&args.config)?];
    let parameters = json!({
        "simulation": cfg,
        "format": args.format,
        "compartment_digest": c.structure_digest(),
    });
    let mut out = OutputDir::create(&args.out, args.force)?;
    let run = run_pipeline(&c, &cfg, &mut out, args.format)?;
    if args.svg {
        let svg = line_plot("Averaged potential", "t (ms)", "v (mV)", &run.record.times, &run.v);
        out.write_bytes("v_trace.svg", svg.as_bytes())?;
    }
    let manifest = RunManifest {
        command: "simulate".into(),
        spec_path: Some(inputs[0].path.clone()),
        config_digest: config_digest("simulate", cfg.seed, TOOL_VERSION, &parameters, &inputs),
        seed: cfg.seed,
        tool_version: TOOL_VERSION.into(),
        parameters,
        inputs,
        threads: args.threads,
        started_at,
        finished_at: now_rfc3339(),
        outputs: Vec::new(),
    };
    out.finish(manifest)
}

/// Where to measure distances from in the radiality analysis.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Neuron(usize),
    Point(Point),
}

pub struct AnalyzeArgs {
    pub trace: PathBuf,
    pub record: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub source: Option<Source>,
    pub out: PathBuf,
    pub force: bool,
    pub cutoff_hz: f64,
    pub band: (f64, f64),
    pub threshold_mv: f64,
    pub window_ms: f64,
    pub svg: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub sample_rate_hz: f64,
    pub cutoff_hz: f64,
    pub band_hz: (f64, f64),
    pub dominant_hz: f64,
    pub bin_width_hz: f64,
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl SpectrumSummary {
    fn from_report(r: &SpectrumReport, cutoff_hz: f64) -> SpectrumSummary {
        SpectrumSummary {
            sample_rate_hz: r.sample_rate,
            cutoff_hz,
            band_hz: r.band,
            dominant_hz: r.dominant_hz,
            bin_width_hz: r.frequencies.get(1).copied().unwrap_or(0.0),
            frequencies: r.frequencies.clone(),
            power: r.power.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialitySummary {
    pub source: Point,
    pub source_neuron: Option<usize>,
    pub pearson_r: f64,
    pub n_active: usize,
    pub threshold_mv: f64,
    pub window_ms: f64,
    pub latencies: BTreeMap<usize, f64>,
}

pub struct AnalyzeOutcome {
    pub spectrum: SpectrumSummary,
    pub radiality: Option<RadialitySummary>,
    pub manifest: RunManifest,
}

/// Sample rate in Hz from a uniformly spaced millisecond time axis.
pub fn sample_rate_of(times: &[f64]) -> Result<f64, CliError> {
    if times.len() < 2 {
        return Err(analysis_err(AnalysisError::SignalTooShort {
            len: times.len(),
            min: 2,
        }));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let uneven = times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs());
    if !(dt > 0.0) || uneven {
        return Err(analysis_err(AnalysisError::InvalidInput(
            "time axis must be increasing and evenly spaced".into(),
        )));
    }
    Ok(1000.0 / dt)
}

fn read_record(path: &Path, c: &Compartment) -> Result<SimulationRecord, CliError> {
    let mut f = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut magic = [0u8; 4];
    let is_binary = f.read_exact(&mut magic).is_ok() && &magic == b"NCG1";
    let f = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let rec = if is_binary {
        let ids = c.neurons.iter().map(|n| n.id).collect();
        read_record_binary(BufReader::new(f), ids)
    } else {
        read_record_csv(BufReader::new(f))
    };
    rec.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn radiality(
    record: &SimulationRecord,
    c: &Compartment,
    source: &Source,
    threshold_mv: f64,
    window_ms: f64,
) -> Result<RadialitySummary, CliError> {
    let positions: BTreeMap<usize, Point> = c.neurons.iter().map(|n| (n.id, n.position)).collect();
    let (point, source_neuron) = match source {
        Source::Neuron(id) => {
            let p = positions
                .get(id)
                .ok_or_else(|| CliError::Usage(format!("source neuron {id} is not in the compartment")))?;
            (*p, Some(*id))
        }
        Source::Point(p) => (*p, None),
    };
    let latencies = latencies_within(&activation_latencies(record, threshold_mv), window_ms);
    let RadialityReport {
        source,
        latencies,
        pearson_r,
        n_active,
    } = radiality_score(&latencies, &positions, point).map_err(analysis_err)?;
    Ok(RadialitySummary {
        source,
        source_neuron,
        pearson_r,
        n_active,
        threshold_mv,
        window_ms,
        latencies,
    })
}

fn write_spectrum_outputs(out: &mut OutputDir, s: &SpectrumSummary, svg: bool) -> Result<(), CliError> {
    out.write_json("spectrum.json", s)?;
    if svg {
        let keep: Vec<usize> = (0..s.frequencies.len())
            .filter(|&k| s.frequencies[k] <= 2.0 * s.band_hz.1)
            .collect();
        let f: Vec<f64> = keep.iter().map(|&k| s.frequencies[k]).collect();
        let p: Vec<f64> = keep.iter().map(|&k| s.power[k]).collect();
        let title = format!("Power spectrum, dominant {:.2} Hz", s.dominant_hz);
        out.write_bytes("spectrum.svg", line_plot(&title, "f (Hz)", "PSD", &f, &p).as_bytes())?;
    }
    Ok(())
}

fn write_radiality_outputs(
    out: &mut OutputDir,
    r: &RadialitySummary,
    c: &Compartment,
    svg: bool,
) -> Result<(), CliError> {
    out.write_json("radiality.json", r)?;
    if svg {
        let mut d = Vec::with_capacity(r.latencies.len());
        let mut t = Vec::with_capacity(r.latencies.len());
        for (id, lat) in &r.latencies {
            let n = c.neuron(*id).unwrap();
            d.push(ncell_core::lattice::distance(&n.position, &r.source));
            t.push(*lat);
        }
        let title = format!("Activation latency vs distance, r = {:.3}", r.pearson_r);
        out.write_bytes(
            "radiality.svg",
            scatter_plot(&title, "distance from source", "latency (ms)", &d, &t).as_bytes(),
        )?;
    }
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<AnalyzeOutcome, CliError> {
    let started_at = now_rfc3339();
    let trace_file =
        fs::File::open(&args.trace).map_err(|e| CliError::Usage(format!("{}: {e}", args.trace.display())))?;
    let (times, v) = read_trace_csv(BufReader::new(trace_file))
        .map_err(|e| CliError::Parse(format!("{}: {e}", args.trace.display())))?;
    let fs_hz = sample_rate_of(&times)?;
    let report = analyze_spectrum(&v, fs_hz, args.cutoff_hz, args.band).map_err(analysis_err)?;
    let spectrum = SpectrumSummary::from_report(&report, args.cutoff_hz);

    let mut inputs = vec![input_digest(&args.trace)?];
    let mut rad_input = None;
    if let Some(record_path) = &args.record {
        let spec = args
            .spec
            .as_ref()
            .ok_or_else(|| CliError::Usage("radiality needs --spec for neuron positions".into()))?;
        let source = args
            .source
            .as_ref()
            .ok_or_else(|| CliError::Usage("radiality needs --source-neuron or --source".into()))?;
        let c = load_compartment(spec)?;
        let record = read_record(record_path, &c)?;
        inputs.push(input_digest(record_path)?);
        inputs.push(input_digest(spec)?);
        rad_input = Some((c, record, source.clone()));
    }
    let source_json = match &args.source {
        Some(Source::Neuron(id)) => json!({ "neuron": id }),
        Some(Source::Point(p)) => json!({ "point": p }),
        None => serde_json::Value::Null,
    };
    let parameters = json!({
        "cutoff_hz": args.cutoff_hz,
        "band_hz": args.band,
        "threshold_mv": args.threshold_mv,
        "window_ms": args.window_ms,
        "source": source_json,
    });

    let mut out = OutputDir::create(&args.out, args.force)?;
    write_spectrum_outputs(&mut out, &spectrum, args.svg)?;
    let radiality = match &rad_input {
        Some((c, record, source)) => {
            let r = radiality(record, c, source, args.threshold_mv, args.window_ms)?;
            write_radiality_outputs(&mut out, &r, c, args.svg)?;
            Some(r)
        }
        None => None,
    };
    let manifest = RunManifest {
        command: "analyze".into(),
        spec_path: args.spec.as_ref().map(|p| p.to_string_lossy().into_owned()),
        config_digest: config_digest("analyze", 0, TOOL_VERSION, &parameters, &inputs),
        seed: 0,
        tool_version: TOOL_VERSION.into(),
        parameters,
        inputs,
        threads: None,
        started_at,
        finished_at: now_rfc3339(),
        outputs: Vec::new(),
    };
    Ok(AnalyzeOutcome {
        spectrum,
        radiality,
        manifest: out.finish(manifest)?,
    })
}

pub struct DemoArgs {
    pub out: PathBuf,
    pub force: bool,
    pub total_neurons: usize,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub format: RecordFormat,
    pub svg: bool,
    pub frames: bool,
    pub threads: Option<usize>,
}

pub const FRAME_INTERVAL_MS: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoReport {
    pub neurons: usize,
    pub synapses: usize,
    pub ncells: usize,
    pub stimulated_neuron: usize,
    pub duration_ms: f64,
    pub dt_ms: f64,
    pub dominant_hz: f64,
    pub pearson_r: Option<f64>,
    pub n_active: usize,
    pub radiality_error: Option<String>,
    pub frame_count: usize,
    pub elapsed_s: f64,
}

pub struct DemoOutcome {
    pub report: DemoReport,
    pub manifest: RunManifest,
}

/// Fraction of each lattice cell's neurons above `threshold_mv`, one 2-D grid
/// per frame, as a `[frames, ny, nx]` array.
pub fn activation_frames(
    record: &SimulationRecord,
    c: &Compartment,
    threshold_mv: f64,
    interval_ms: f64,
) -> (Vec<usize>, Vec<f64>) {
    let d = &c.domain;
    let (nx, ny) = (d.resolution[0], d.resolution[1].max(1));
    let cells = nx * ny;
    let cell_of: Vec<Option<usize>> = c.neurons.iter().map(|n| d.cell_of(&n.position)).collect();
    let mut per_cell = vec![0usize; cells];
    for cell in cell_of.iter().flatten() {
        per_cell[*cell] += 1;
    }
    let row_dt = if record.times.len() > 1 {
        record.times[1] - record.times[0]
    } else {
        interval_ms
    };
    let stride = ((interval_ms / row_dt).round() as usize).max(1);
    let rows: Vec<usize> = (0..record.times.len()).step_by(stride).collect();
    let mut values = vec![0.0; rows.len() * cells];
    for (f, &k) in rows.iter().enumerate() {
        let frame = &mut values[f * cells..(f + 1) * cells];
        for (u, cell) in record.row(k).iter().zip(&cell_of) {
            if let Some(cell) = cell {
                if *u > threshold_mv {
                    frame[*cell] += 1.0;
                }
            }
        }
        for (v, n) in frame.iter_mut().zip(&per_cell) {
            if *n > 0 {
                *v /= *n as f64;
            }
        }
    }
    (vec![rows.len(), ny, nx], values)
}

pub fn demo_striatum(args: &DemoArgs) -> Result<DemoOutcome, CliError> {
    let clock = Instant::now();
    let started_at = now_rfc3339();
    let mut params = StriatumParams::scaled(args.total_neurons);
    params.seed = args.seed;
    let striatum = build_striatum(&params).map_err(CliError::domain)?;
    let c = &striatum.compartment;
    let cfg = demo_config(&striatum, args.duration, args.dt, args.seed);
    cfg.check().map_err(CliError::domain)?;
    let stimulated = match cfg.stimuli.first().map(|s| &s.target) {
        Some(ncell_core::dynamics::StimulusTarget::Neurons(ids)) => ids[0],
        _ => return Err(CliError::Domain("the striatum has no cholinergic neuron to stimulate".into())),
    };

    let parameters = json!({
        "striatum": params,
        "simulation": cfg,
        "format": args.format,
        "frames": args.frames,
    });
    let mut out = OutputDir::create(&args.out, args.force)?;
    out.write_spec(c, "striatum.toml")?;
    let sim_toml = toml::to_string(&cfg).map_err(CliError::domain)?;
    out.write_bytes("sim_config.toml", sim_toml.as_bytes())?;
    out.write_json("striatum_params.json", &params)?;
    let mut pops = String::from("neuron_id, population, x, y\n");
    for (n, p) in c.neurons.iter().zip(&striatum.populations) {
        pops.push_str(&format!("{}, {}, {}, {}\n", n.id, p, n.position[0], n.position[1]));
    }
    out.write_bytes("populations.csv", pops.as_bytes())?;

    let run = run_pipeline(c, &cfg, &mut out, args.format)?;
    let fs_hz = sample_rate_of(&run.record.times)?;
    let cutoff = ncell_core::analysis::DEFAULT_CUTOFF_HZ;
    let report = analyze_spectrum(&run.v, fs_hz, cutoff, ncell_core::analysis::DEFAULT_BAND_HZ).map_err(analysis_err)?;
    let spectrum = SpectrumSummary::from_report(&report, cutoff);
    write_spectrum_outputs(&mut out, &spectrum, args.svg)?;
    let threshold = ncell_core::analysis::DEFAULT_ACTIVATION_MV;
    let rad = radiality(&run.record, c, &Source::Neuron(stimulated), threshold, DEMO_WINDOW_MS);
    let (pearson_r, n_active, radiality_error) = match &rad {
        Ok(r) => {
            write_radiality_outputs(&mut out, r, c, args.svg)?;
            (Some(r.pearson_r), r.n_active, None)
        }
        Err(e) => (None, 0, Some(e.to_string())),
    };
    if args.svg {
        let svg = line_plot("Averaged potential", "t (ms)", "v (mV)", &run.record.times, &run.v);
        out.write_bytes("v_trace.svg", svg.as_bytes())?;
    }
    let mut frame_count = 0;
    if args.frames {
        let (sizes, values) = activation_frames(&run.record, c, threshold, FRAME_INTERVAL_MS);
        frame_count = sizes[0];
        out.write_with("frames.ncg", |w| write_grid(w, &sizes, &values).map_err(CliError::domain))?;
    }

    let report = DemoReport {
        neurons: c.neuron_count(),
        synapses: c.synapse_count(),
        ncells: c.ncells.len(),
        stimulated_neuron: stimulated,
        duration_ms: cfg.duration,
        dt_ms: cfg.dt,
        dominant_hz: spectrum.dominant_hz,
        pearson_r,
        n_active,
        radiality_error,
        frame_count,
        elapsed_s: clock.elapsed().as_secs_f64(),
    };
    out.write_json("demo_report.json", &report)?;
    let manifest = RunManifest {
        command: "demo-striatum".into(),
        spec_path: Some(out.file("striatum.toml").to_string_lossy().into_owned()),
        config_digest: config_digest("demo-striatum", args.seed, TOOL_VERSION, &parameters, &[]),
        seed: args.seed,
        tool_version: TOOL_VERSION.into(),
        parameters,
        inputs: Vec::new(),
        threads: args.threads,
        started_at,
        finished_at: now_rfc3339(),
        outputs: Vec::new(),
    };
    Ok(DemoOutcome {
        report,
        manifest: out.finish(manifest)?,
    })
}

/// Neurons first activating within this many ms enter the radiality score.
pub const DEMO_WINDOW_MS: f64 = 200.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_rate_from_time_axis() {
        assert!((sample_rate_of(&[0.0, 0.5, 1.0, 1.5]).unwrap() - 2000.0).abs() < 1e-9);
        assert!(sample_rate_of(&[0.0, 0.5, 1.5]).is_err());
        assert!(sample_rate_of(&[0.0]).is_err());
    }

    #[test]
    fn analysis_errors_carry_their_name() {
        let e = analysis_err(AnalysisError::SignalTooShort { len: 3, min: 64 });
        assert!(e.to_string().starts_with("SignalTooShort"));
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn relative_out_uses_default_under_command_name() {
        let p = resolve_out(None, "simulate");
        assert!(p.ends_with("ncell-out/simulate"));
        let abs = resolve_out(Some(PathBuf::from("/tmp/x")), "simulate");
        assert_eq!(abs, PathBuf::from("/tmp/x"));
    }
}
