use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otfilter::error::{FilterError, Result};
use otfilter::harness::{load_experiment_spec, run_experiment, run_sweep, timing_table, ExperimentSpec, RunManifest};

#[derive(Parser)]
#[command(name = "otfilter", version, about = "Ensemble, particle and optimal-transport filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method on every seed of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides OTFILTER_OUT and the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat an experiment over the values of one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// dimension, particles or train_budget.
        #[arg(long)]
        axis: String,
        /// Comma-separated integers.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a Markdown timing table for one or more manifests.
    Report {
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
    },
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<ExperimentSpec> {
    let mut spec = load_experiment_spec(config).map_err(|e| match e {
        FilterError::Io { path, source } => FilterError::validation("config", format!("cannot read {path}: {source}")),
        other => other,
    })?;
    if let Some(dir) = out.or_else(|| std::env::var_os("OTFILTER_OUT").map(PathBuf::from)) {
        spec.out_dir = dir;
    }
    Ok(spec)
}

fn parse_values(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| FilterError::validation("values", format!("`{v}` is not a non-negative integer")))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut spec = load(&config, out)?;
            if let Some(s) = seed {
                spec.seeds = vec![s];
            }
            let manifest = run_experiment(&spec)?;
            for r in manifest.failures() {
                let f = r.failure.as_ref().expect("filtered");
                eprintln!("{} {}: failed at step {}: {}", r.run_id, r.method, f.step, f.message);
            }
            println!("{}", spec.out_dir.join(RunManifest::FILE_NAME).display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let spec = load(&config, out)?;
            let axis = axis.parse()?;
            let values = parse_values(&values)?;
            run_sweep(&spec, axis, &values)?;
            println!("{}", spec.out_dir.join("sweep.csv").display());
        }
        Command::Report { manifest } => {
            let manifests = manifest
                .iter()
                .map(|p| RunManifest::load(p))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", timing_table(&manifests));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FilterError::Validation { .. } | FilterError::InvalidConfig(_) | FilterError::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
