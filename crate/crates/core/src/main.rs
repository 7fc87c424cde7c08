use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flst::runner::{emit_summary, output_dir_for, render_report, run_experiment, ExperimentConfig, SeedsConfig};
use flst::FlstError;

#[derive(Parser)]
#[command(name = "flst", version, about = "Federated student-teacher-scheduler training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config (or an emitted manifest).
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; replaces every per-subsystem seed with one derived from it.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a metrics CSV.
    Summarize {
        metrics: PathBuf,
        #[arg(long, default_value_t = 100)]
        final_window: usize,
    },
    /// Parse and validate a config, printing the resolved form.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &FlstError) -> u8 {
    match err {
        FlstError::Config(_) | FlstError::Validation(_) => EXIT_CONFIG,
        FlstError::Numeric(_) | FlstError::Estimation(_) => EXIT_NUMERIC,
        FlstError::Io { .. } | FlstError::Decode { .. } | FlstError::Parse { .. } => EXIT_IO,
        FlstError::Shape(_) => EXIT_OTHER,
    }
}

fn load(path: &PathBuf, seed: Option<u64>) -> flst::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.seeds = SeedsConfig::default();
        cfg.resolve();
    }
    cfg.run_record = None;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> flst::Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let dir = output_dir_for(&cfg, out.as_deref());
            log::info!("running {:?} into {}", cfg.scenario, dir.display());
            let summary = run_experiment(&cfg, &dir)?;
            print!("{}", render_report(&summary));
            println!("outputs in {}", dir.display());
        }
        Command::Summarize { metrics, final_window } => {
            let (_, report) = emit_summary(&metrics, final_window)?;
            print!("{report}");
        }
        Command::Validate { config, seed } => {
            let cfg = load(&config, seed)?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
