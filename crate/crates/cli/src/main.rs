use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use puretherm::config::RunConfig;
use puretherm::pipeline::{run_pipeline, Context, Manifest, Stage, StageRecord};
use puretherm::{Error, Result};

#[derive(Parser)]
#[command(name = "puretherm", version, about = "Pure-state thermometry pipeline for a driven XXZ chain")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state, drive and relaxation.
    Prepare,
    /// Trajectories of the probe expectation and energy.
    Evolve,
    /// Two-point correlation functions.
    Correlate,
    /// Noise and response spectra with the FDT temperature fit.
    Spectra,
    /// Chebyshev moments, density of states and microcanonical temperatures.
    Kpm,
    /// Exact-diagonalisation matrix-element statistics.
    Eth,
    /// Qubit decoherence traces and rates.
    Decohere,
    /// Quantum Fisher information and thermometry error budgets.
    Fisher,
    /// Diffusive hydrodynamic rates and dephasing crossover.
    Hydro(HydroArgs),
    /// Every stage in order.
    Pipeline,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
struct HydroArgs {
    /// Spatial dimension.
    #[arg(long = "d")]
    dim: Option<usize>,
    /// Run the finite-size rate sweep.
    #[arg(long = "sweep-L")]
    sweep: bool,
    /// System sizes for the sweep.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<f64>>,
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn report(r: &StageRecord) {
    println!("{:<10} {:<8} {} files  {:.2} s", r.stage.name(), r.status, r.artifacts.len(), r.wall_time_s);
    for n in &r.notes {
        println!("           note: {n}");
    }
}

fn summary(m: &Manifest) {
    for r in &m.stages {
        report(r);
    }
    println!("run {}  {} artifacts  content hash {}", m.run_id, m.artifact_count(), m.content_hash());
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Resource(e.to_string()))?;
    }
    let mut cfg = load(&cli.common)?;
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::Pipeline => {
            let out = cfg.output.clone();
            let m = run_pipeline(cfg, &out)?;
            summary(&m);
            return Ok(());
        }
        Command::Hydro(args) => {
            if let Some(d) = args.dim {
                cfg.hydro.dim = d;
            }
            if args.sweep {
                cfg.hydro.sweep = true;
            }
            if let Some(l) = args.lengths {
                cfg.hydro.sweep_lengths = l;
            }
            // the hydrodynamic stage draws no random numbers
            cfg.seed.get_or_insert(0);
            Stage::Hydro
        }
        Command::Prepare => Stage::Prepare,
        Command::Evolve => Stage::Evolve,
        Command::Correlate => Stage::Correlate,
        Command::Spectra => Stage::Spectra,
        Command::Kpm => Stage::Kpm,
        Command::Eth => Stage::Eth,
        Command::Decohere => Stage::Decohere,
        Command::Fisher => Stage::Fisher,
    };
    let out = cfg.output.clone();
    let ctx = Context::new(cfg, out)?;
    report(&ctx.run_stage(stage)?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
