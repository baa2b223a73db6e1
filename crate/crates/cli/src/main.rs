use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncell_cli::commands::{self, AnalyzeArgs, DemoArgs, RecordFormat, SimulateArgs, Source};
use ncell_cli::{with_threads, CliError};
use ncell_core::analysis::{DEFAULT_ACTIVATION_MV, DEFAULT_BAND_HZ, DEFAULT_CUTOFF_HZ};
use ncell_core::dynamics::DEFAULT_DT_MS;
use ncell_core::striatum::DEMO_DURATION_MS;

#[derive(Parser)]
#[command(name = "ncell", version, about = "Simulate and analyze n-cell neural compartments")]
struct Cli {
    /// Worker threads for simulation and averaging. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutOpts {
    /// Output directory (relative paths go under $NCELL_OUT_ROOT if set).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a directory that already holds a run manifest.
    #[arg(long)]
    force: bool,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a compartment spec and print its validation report.
    Validate { spec: PathBuf },
    /// Simulate a compartment and write the record, v(t) and a manifest.
    Simulate {
        spec: PathBuf,
        /// Simulation config (TOML: dt, duration, seed, record_every, stimuli).
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: RecordFormat,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Spectrum of a v(t) trace, plus radiality when a record is given.
    Analyze {
        /// Trace CSV with columns `t_ms, v_model_mV`.
        trace: PathBuf,
        /// Simulation record (CSV or binary) for the radiality score.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Compartment spec supplying neuron positions.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Measure distances from this neuron.
        #[arg(long, conflicts_with = "source")]
        source_neuron: Option<usize>,
        /// Measure distances from this point, e.g. `40,40`.
        #[arg(long, value_delimiter = ',', num_args = 1..=3)]
        source: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_CUTOFF_HZ)]
        cutoff_hz: f64,
        #[arg(long, default_value_t = DEFAULT_BAND_HZ.0)]
        band_lo: f64,
        #[arg(long, default_value_t = DEFAULT_BAND_HZ.1)]
        band_hi: f64,
        #[arg(long, default_value_t = DEFAULT_ACTIVATION_MV)]
        threshold_mv: f64,
        /// Only neurons activating within this window enter the radiality score.
        #[arg(long, default_value_t = commands::DEMO_WINDOW_MS)]
        window_ms: f64,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Build the striatum compartment, stimulate one cholinergic neuron and
    /// run the whole pipeline.
    DemoStriatum {
        #[arg(long, default_value_t = 6400)]
        total_neurons: usize,
        #[arg(long, default_value_t = DEMO_DURATION_MS)]
        duration: f64,
        #[arg(long, default_value_t = DEFAULT_DT_MS)]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "binary")]
        format: RecordFormat,
        /// Skip the activation frames.
        #[arg(long)]
        no_frames: bool,
        #[command(flatten)]
        out: OutOpts,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Validate { spec } => {
            let report = commands::validate(&spec)?;
            if report.is_empty() {
                println!("OK");
                Ok(())
            } else {
                print!("{report}");
                Err(CliError::Domain(format!("{} violation(s)", report.len())))
            }
        }
        Command::Simulate {
            spec,
            config,
            seed,
            format,
            out,
        } => {
            let args = SimulateArgs {
                spec,
                config,
                out: commands::resolve_out(out.out, "simulate"),
                seed,
                force: out.force,
                format,
                svg: out.svg,
                threads,
            };
            let m = with_threads(threads, || commands::simulate(&args))?;
            println!("wrote {} files to {}", m.outputs.len() + 1, args.out.display());
            println!("digest {}", m.config_digest);
            Ok(())
        }
        Command::Analyze {
            trace,
            record,
            spec,
            source_neuron,
            source,
            cutoff_hz,
            band_lo,
            band_hi,
            threshold_mv,
            window_ms,
            out,
        } => {
            let source = match (source_neuron, source) {
                (Some(id), _) => Some(Source::Neuron(id)),
                (None, Some(p)) => {
                    let mut pt = [0.0; 3];
                    pt[..p.len()].copy_from_slice(&p);
                    Some(Source::Point(pt))
                }
                (None, None) => None,
            };
            let args = AnalyzeArgs {
                trace,
                record,
                spec,
                source,
                out: commands::resolve_out(out.out, "analyze"),
                force: out.force,
                cutoff_hz,
                band: (band_lo, band_hi),
                threshold_mv,
                window_ms,
                svg: out.svg,
            };
            let o = with_threads(threads, || commands::analyze(&args))?;
            println!("dominant_hz {}", o.spectrum.dominant_hz);
            if let Some(r) = o.radiality {
                println!("pearson_r {} over {} active neurons", r.pearson_r, r.n_active);
            }
            Ok(())
        }
        Command::DemoStriatum {
            total_neurons,
            duration,
            dt,
            seed,
            format,
            no_frames,
            out,
        } => {
            let args = DemoArgs {
                out: commands::resolve_out(out.out, "demo-striatum"),
                force: out.force,
                total_neurons,
                duration,
                dt,
                seed,
                format,
                svg: out.svg,
                frames: !no_frames,
                threads,
            };
            let o = with_threads(threads, || commands::demo_striatum(&args))?;
            let r = &o.report;
            println!(
                "{} neurons, {} synapses, {} n-cells; stimulated neuron {}",
                r.neurons, r.synapses, r.ncells, r.stimulated_neuron
            );
            println!("dominant_hz {}", r.dominant_hz);
            match (r.pearson_r, &r.radiality_error) {
                (Some(p), _) => println!("pearson_r {p} over {} active neurons", r.n_active),
                (None, Some(e)) => println!("radiality unavailable: {e}"),
                _ => {}
            }
            println!("wrote {} in {:.1} s", args.out.display(), r.elapsed_s);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
