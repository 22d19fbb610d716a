//! `mdn` — batch driver for the experiment pipeline.
//!
//! Verbs: `run` (execute a grid of configurations), `compare` (statistical
//! comparison tables from a results CSV), `export-embeddings` (latents from a
//! checkpoint), and `gen-data` (synthetic trial archives). Exit codes:
//! 0 success, 1 runtime failure, 2 configuration error.

use clap::{Parser, Subcommand};
use mdn::data::SyntheticSpec;
use mdn::error::Error;
use mdn::exp::{
    cmd_compare, cmd_export_embeddings, cmd_gen_data, cmd_run, ExperimentConfig, OUT_DIR_ENV,
};
use mdn::stats::CompareOptions;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mdn",
    version,
    about = "Multi-objective diffusion decoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every configuration in an experiment JSON across its seeds.
    Run {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config's output_dir, then $MDN_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Parallel worker threads over grid entries.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Print per-config progress.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Build the four comparison tables for one metric and split.
    Compare {
        /// Results CSV (header: config_id,seed,split,metric,value).
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
        #[arg(long, default_value = "unseen")]
        split: String,
        /// Output directory for the report tables.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Region of practical equivalence for the Bayesian comparison.
        #[arg(long, default_value_t = 0.01)]
        rope: f64,
        /// Monte Carlo resamples when exact permutation enumeration is
        /// infeasible.
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
    },
    /// Export per-trial latents from a checkpoint over an archive.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic trial archive from a generator spec (JSON).
    GenData {
        /// Generator spec JSON; omit for the default 4-class task.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_out(kind: &str) -> PathBuf {
    match std::env::var(OUT_DIR_ENV) {
        Ok(dir) => PathBuf::from(dir).join(kind),
        Err(_) => PathBuf::from(format!("mdn-{kind}")),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
            verbose,
        } => {
            let experiment = ExperimentConfig::from_json_file(&config)?;
            let outcome = cmd_run(&experiment, out.as_deref(), seeds.as_deref(), jobs, verbose)?;
            println!("results: {}", outcome.results_path.display());
            if !outcome.failures.is_empty() {
                for (name, error) in &outcome.failures {
                    eprintln!("config {name} failed: {error}");
                }
                return Err(Error::Runtime(format!(
                    "{} of the grid entries failed",
                    outcome.failures.len()
                )));
            }
            Ok(())
        }
        Command::Compare {
            results,
            metric,
            split,
            out,
            rope,
            resamples,
        } => {
            let out_dir = out.unwrap_or_else(|| default_out("reports"));
            let options = CompareOptions {
                rope,
                n_resamples: resamples,
                ..CompareOptions::default()
            };
            let paths = cmd_compare(&results, &metric, &split, &out_dir, &options)?;
            for path in paths {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::ExportEmbeddings {
            checkpoint,
            archive,
            out,
        } => {
            let n = cmd_export_embeddings(&checkpoint, &archive, &out)?;
            println!("exported {n} rows to {}", out.display());
            Ok(())
        }
        Command::GenData { config, out } => {
            let spec = match config {
                Some(path) => {
                    let bytes = std::fs::read(&path).map_err(|e| {
                        Error::Config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    serde_json::from_slice::<SyntheticSpec>(&bytes)
                        .map_err(|e| Error::Config(format!("invalid generator spec: {e}")))?
                }
                None => SyntheticSpec::default(),
            };
            let n = cmd_gen_data(&spec, &out)?;
            println!("wrote {n} trials to {}", out.display());
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
