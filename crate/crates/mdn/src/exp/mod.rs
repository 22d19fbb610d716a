//! Experiment orchestration: run a grid of configurations across seeds,
//! persist results and checkpoints, compare configurations, and export
//! embeddings. The batch surface behind the command-line verbs.

mod spec;

pub use spec::{
    DataSource, DiffusionDto, EncoderDto, ExperimentConfig, LossDto, MixupDto, RunSpec, SplitDto,
};

use crate::data::{generate_synthetic, load_archive, make_splits, save_archive, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::stats::{compare_configs, render_reports, CompareOptions};
use crate::train::{run_seeds, SeedResultTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MDN_OUT_DIR";

fn resolve_out_dir(explicit: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = explicit {
        return dir.to_path_buf();
    }
    if let Some(dir) = &config.output_dir {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        return PathBuf::from(dir);
    }
    PathBuf::from("mdn-out")
}

#[derive(Debug, Serialize)]
struct RunRecord {
    name: String,
    status: String,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: String,
    version: String,
    created_unix: u64,
    config_hash: String,
    seeds: Vec<u64>,
    runs: Vec<RunRecord>,
    results: String,
}

/// Outcome of `cmd_run`.
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub results_path: PathBuf,
    pub failures: Vec<(String, String)>,
}

/// Execute every named configuration across the experiment's seeds.
///
/// Results land in `<out>/results.csv` (deterministic given the config),
/// checkpoints in `<out>/checkpoints/`, per-epoch histories in
/// `<out>/history.csv`, and a manifest with the config hash in
/// `<out>/manifest.json`. A failing grid entry is recorded and does not stop
/// the others.
pub fn cmd_run(
    config: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_override: Option<&[u64]>,
    jobs: usize,
    verbose: bool,
) -> Result<RunOutcome> {
    config.validate()?;
    let out_dir = resolve_out_dir(out_override, config);
    std::fs::create_dir_all(&out_dir)?;
    let checkpoints_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints_dir)?;
    let seeds: Vec<u64> = seed_override.unwrap_or(&config.seeds).to_vec();
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }

    let trials = match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic::<f64>(spec)?,
        DataSource::Archive(path) => load_archive::<f64>(path)?,
    };
    if trials.is_empty() {
        return Err(Error::Config("data source produced no trials".into()));
    }
    let channels = trials[0].channels();
    let timepoints = trials[0].timepoints();
    let split = make_splits(trials, &config.split.clone().into_params())?;
    let n_classes = split.n_classes;

    // Materialize and validate every entry before any training starts.
    let mut planned = Vec::new();
    for run in &config.configs {
        let train_config = run
            .to_train_config(channels, timepoints, n_classes)
            .map_err(|e| Error::Config(format!("config {:?}: {e}", run.name)))?;
        planned.push((run.name.clone(), train_config));
    }

    struct WorkerOutput {
        name: String,
        result: Result<crate::train::SeedRunOutput<f64>>,
    }

    let next = AtomicUsize::new(0);
    let outputs: Mutex<Vec<WorkerOutput>> = Mutex::new(Vec::new());
    let worker_count = jobs.max(1).min(planned.len());
    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= planned.len() {
                    break;
                }
                let (name, train_config) = &planned[idx];
                if verbose {
                    eprintln!("[mdn] running config {name} ({} seeds)", seeds.len());
                }
                let result = run_seeds(train_config, &split, &seeds, name);
                outputs.lock().unwrap().push(WorkerOutput {
                    name: name.clone(),
                    result,
                });
            });
        }
    });

    struct HistoryRow {
        config: String,
        seed: u64,
        epoch: usize,
        classification: f64,
        reconstruction: f64,
        contrastive: f64,
        total: f64,
        ddpm: Option<f64>,
        val_accuracy: Option<f64>,
    }

    let mut table = SeedResultTable::<f64>::new();
    let mut run_records = Vec::new();
    let mut failures = Vec::new();
    let mut history_rows: Vec<HistoryRow> = Vec::new();
    let mut outputs = outputs.into_inner().unwrap();
    outputs.sort_by(|a, b| a.name.cmp(&b.name));
    for output in outputs {
        match output.result {
            Ok(run) => {
                table.extend(run.table);
                for (seed, bundle) in &run.bundles {
                    let path = checkpoints_dir.join(format!("{}__seed{}.ckpt", output.name, seed));
                    bundle.save(&path)?;
                }
                for (seed, history) in &run.histories {
                    for (epoch, record) in history.epochs.iter().enumerate() {
                        history_rows.push(HistoryRow {
                            config: output.name.clone(),
                            seed: *seed,
                            epoch,
                            classification: record.loss.classification,
                            reconstruction: record.loss.reconstruction,
                            contrastive: record.loss.contrastive,
                            total: record.loss.total,
                            ddpm: record.ddpm_loss,
                            val_accuracy: record.val_accuracy,
                        });
                    }
                }
                run_records.push(RunRecord {
                    name: output.name,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                failures.push((output.name.clone(), e.to_string()));
                run_records.push(RunRecord {
                    name: output.name,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    table.sort();
    let results_path = out_dir.join("results.csv");
    table.save_csv(&results_path)?;

    let history_path = out_dir.join("history.csv");
    {
        let mut writer = csv::Writer::from_path(&history_path)?;
        writer.write_record([
            "config_id",
            "seed",
            "epoch",
            "classification",
            "reconstruction",
            "contrastive",
            "total",
            "ddpm",
            "val_accuracy",
        ])?;
        history_rows
            .sort_by(|a, b| (&a.config, a.seed, a.epoch).cmp(&(&b.config, b.seed, b.epoch)));
        for row in &history_rows {
            writer.write_record([
                row.config.as_str(),
                &row.seed.to_string(),
                &row.epoch.to_string(),
                &row.classification.to_string(),
                &row.reconstruction.to_string(),
                &row.contrastive.to_string(),
                &row.total.to_string(),
                &row.ddpm.map(|v| v.to_string()).unwrap_or_default(),
                &row.val_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        writer.flush()?;
    }

    let manifest = Manifest {
        tool: "mdn".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config_hash: config.hash(),
        seeds,
        runs: run_records,
        results: "results.csv".into(),
    };
    let mut manifest_file = std::fs::File::create(out_dir.join("manifest.json"))?;
    manifest_file.write_all(&serde_json::to_vec_pretty(&manifest)?)?;

    Ok(RunOutcome {
        out_dir,
        results_path,
        failures,
    })
}

/// Run the full comparison pipeline over a results CSV and render the four
/// report tables into `out_dir`.
pub fn cmd_compare(
    results_csv: &Path,
    metric: &str,
    split: &str,
    out_dir: &Path,
    options: &CompareOptions<f64>,
) -> Result<Vec<PathBuf>> {
    let table = SeedResultTable::<f64>::load_csv(results_csv)?;
    let samples = table.aligned_samples(metric, split)?;
    let set = compare_configs(metric, split, &samples, options)?;
    render_reports(&set, out_dir)
}

/// Export raw latents (subject, label, z components) for every trial in an
/// archive, using a trained checkpoint.
pub fn cmd_export_embeddings(checkpoint: &Path, archive: &Path, out_path: &Path) -> Result<usize> {
    let bundle = ModelBundle::<f64>::load(checkpoint)?;
    let trials = load_archive::<f64>(archive)?;
    if let Some(first) = trials.first() {
        if first.channels() != bundle.config.channels
            || first.timepoints() != bundle.config.timepoints
        {
            return Err(Error::Config(format!(
                "archive trials are {}x{} but the checkpoint expects {}x{}",
                first.channels(),
                first.timepoints(),
                bundle.config.channels,
                bundle.config.timepoints
            )));
        }
    }
    let dim = bundle.config.encoder.latent_dim;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(out_path)?;
    let mut header = vec!["subject".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("z_{i}")));
    writer.write_record(&header)?;
    for (i, trial) in trials.iter().enumerate() {
        let z = bundle.latent_for_trial(trial, 0xE68, i as u64)?;
        let mut record = vec![trial.subject_id.clone(), trial.label.to_string()];
        record.extend(z.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(trials.len())
}

/// Generate a synthetic archive on disk.
pub fn cmd_gen_data(spec: &SyntheticSpec, out_dir: &Path) -> Result<usize> {
    let trials = generate_synthetic::<f32>(spec)?;
    save_archive(&trials, out_dir)?;
    Ok(trials.len())
}

/// Deterministic helper used by tests: a seeded rng with an isolated stream.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
