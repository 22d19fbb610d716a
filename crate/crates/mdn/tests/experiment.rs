//! Experiment-surface behavior: the run/compare/export/gen-data verbs at the
//! library level, including error-path exit semantics.

use mdn::data::{load_archive, save_archive, SyntheticSpec};
use mdn::exp::{
    cmd_compare, cmd_export_embeddings, cmd_gen_data, cmd_run, DataSource, DiffusionDto,
    EncoderDto, ExperimentConfig, RunSpec, SplitDto,
};
use mdn::stats::CompareOptions;
use std::path::PathBuf;
use tempfile::TempDir;

fn smoke_run_spec(name: &str) -> RunSpec {
    RunSpec {
        name: name.into(),
        epochs: Some(2),
        batch_size: Some(8),
        learning_rate: None,
        ddpm_learning_rate: None,
        use_ddpm: None,
        use_decoder: None,
        encoder_input: None,
        decoder_input: None,
        classifier: None,
        mixup: None,
        loss: None,
        diffusion: Some(DiffusionDto {
            n_steps: Some(8),
            hidden: Some(8),
            kernel: Some(3),
            ..Default::default()
        }),
        encoder: Some(EncoderDto {
            latent_dim: Some(12),
            proj_dim: Some(8),
            temporal_kernel: Some(9),
            block2_features: Some(8),
            pool1: Some(2),
            pool2: Some(2),
            pool3: Some(2),
            ..Default::default()
        }),
        stats_fraction: None,
        couple_recon_target: None,
    }
}

fn smoke_experiment() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSpec {
            n_subjects: 4,
            n_classes: 2,
            channels: 4,
            timepoints: 32,
            trials_per_subject_class: 8,
            noise_sd: 0.2,
            subject_shift_sd: 0.3,
            base_freqs: vec![2.0, 5.0],
            seed: 3,
        }),
        split: SplitDto {
            unseen_subjects: vec!["s04".into()],
            val_fraction: None,
            seen_test_fraction: None,
            calibration_per_subject: Some(4),
            seed: None,
        },
        seeds: vec![1],
        output_dir: None,
        configs: vec![smoke_run_spec("smoke")],
    }
}

#[test]
fn minimal_run_produces_seen_and_unseen_rows() {
    let dir = TempDir::new().unwrap();
    let outcome = cmd_run(&smoke_experiment(), Some(dir.path()), None, 1, false).unwrap();
    assert!(outcome.failures.is_empty());
    let table = mdn::train::SeedResultTable::<f64>::load_csv(&outcome.results_path).unwrap();
    let splits = table.splits();
    assert!(splits.contains("seen") && splits.contains("unseen"));
    assert!(table.metrics().contains("accuracy"));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("history.csv").exists());
    assert!(dir.path().join("checkpoints/smoke__seed1.ckpt").exists());
}

#[test]
fn missing_archive_is_a_config_error_naming_the_path() {
    let config = ExperimentConfig {
        data: DataSource::Archive(PathBuf::from("/no/such/archive")),
        ..smoke_experiment()
    };
    let err = config.validate().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("/no/such/archive"), "{err}");
}

#[test]
fn compare_on_a_hand_built_fixture_matches_printed_means() {
    // Per-seed values whose means are the printed 0.8586 and 0.8516.
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("results.csv");
    let mut table = mdn::train::SeedResultTable::<f64>::new();
    for (seed, value) in [(1u64, 0.8581), (2, 0.8586), (3, 0.8591)] {
        table.push("x + x_hat + skips", seed, "seen", "accuracy", value);
    }
    for (seed, value) in [(1u64, 0.8511), (2, 0.8516), (3, 0.8521)] {
        table.push("x + x_hat", seed, "seen", "accuracy", value);
    }
    table.sort();
    table.save_csv(&csv_path).unwrap();

    let reports = dir.path().join("reports");
    cmd_compare(
        &csv_path,
        "accuracy",
        "seen",
        &reports,
        &CompareOptions::default(),
    )
    .unwrap();

    let wilcoxon = std::fs::read_to_string(reports.join("wilcoxon.csv")).unwrap();
    let mut lines = wilcoxon.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "config_1,config_2,mean_diff,p_value,mean_1,mean_2,n_seeds"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1, "2 configs x 3 seeds make exactly one pair");
    let fields: Vec<&str> = rows[0].split(',').collect();
    let mean_diff: f64 = fields[2].parse().unwrap();
    let mean_1: f64 = fields[4].parse().unwrap();
    let mean_2: f64 = fields[5].parse().unwrap();
    assert!((mean_diff - (mean_1 - mean_2)).abs() < 1e-9);
    assert!(
        (mean_diff.abs() - 0.006993).abs() < 1e-3,
        "mean_diff {mean_diff}"
    );
    assert_eq!(fields[6], "3");
}

#[test]
fn compare_requires_two_configs() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("results.csv");
    let mut table = mdn::train::SeedResultTable::<f64>::new();
    for seed in 1..=3 {
        table.push("only", seed, "seen", "accuracy", 0.5);
    }
    table.save_csv(&csv_path).unwrap();
    let err = cmd_compare(
        &csv_path,
        "accuracy",
        "seen",
        &dir.path().join("reports"),
        &CompareOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains(">= 2 configurations"), "{err}");
}

#[test]
fn compare_rejects_unknown_metric_or_split() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("results.csv");
    let mut table = mdn::train::SeedResultTable::<f64>::new();
    table.push("a", 1, "seen", "accuracy", 0.5);
    table.push("b", 1, "seen", "accuracy", 0.6);
    table.save_csv(&csv_path).unwrap();
    assert!(cmd_compare(
        &csv_path,
        "nonsense",
        "seen",
        &dir.path().join("r1"),
        &CompareOptions::default()
    )
    .is_err());
    assert!(cmd_compare(
        &csv_path,
        "accuracy",
        "sideways",
        &dir.path().join("r2"),
        &CompareOptions::default()
    )
    .is_err());
}

#[test]
fn exported_embeddings_match_in_process_latents() {
    let dir = TempDir::new().unwrap();
    let outcome = cmd_run(&smoke_experiment(), Some(dir.path()), None, 1, false).unwrap();
    assert!(outcome.failures.is_empty());
    let checkpoint = dir.path().join("checkpoints/smoke__seed1.ckpt");

    let archive = dir.path().join("archive");
    let spec = SyntheticSpec {
        n_subjects: 2,
        n_classes: 2,
        channels: 4,
        timepoints: 32,
        trials_per_subject_class: 3,
        noise_sd: 0.2,
        subject_shift_sd: 0.3,
        base_freqs: vec![2.0, 5.0],
        seed: 11,
    };
    let n = cmd_gen_data(&spec, &archive).unwrap();
    assert_eq!(n, 12);

    let out_csv = dir.path().join("embeddings.csv");
    let exported = cmd_export_embeddings(&checkpoint, &archive, &out_csv).unwrap();
    assert_eq!(exported, 12);

    let content = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = content.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 12); // subject, label, z_0..z_11
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);

    // Recompute the first trial's latent in-process and compare.
    let bundle = mdn::model::ModelBundle::<f64>::load(&checkpoint).unwrap();
    let trials = load_archive::<f64>(&archive).unwrap();
    let z = bundle.latent_for_trial(&trials[0], 0xE68, 0).unwrap();
    let first: Vec<&str> = rows[0].split(',').collect();
    for (d, zv) in z.iter().enumerate() {
        let cell: f64 = first[2 + d].parse().unwrap();
        assert!((cell - zv).abs() < 1e-6, "component {d}: {cell} vs {zv}");
    }
}

#[test]
fn exporting_an_empty_archive_writes_headers_only() {
    let dir = TempDir::new().unwrap();
    let outcome = cmd_run(&smoke_experiment(), Some(dir.path()), None, 1, false).unwrap();
    let checkpoint = dir.path().join("checkpoints/smoke__seed1.ckpt");
    let archive = dir.path().join("empty-archive");
    save_archive::<f32>(&[], &archive).unwrap();
    let out_csv = dir.path().join("empty.csv");
    let exported = cmd_export_embeddings(&checkpoint, &archive, &out_csv).unwrap();
    assert_eq!(exported, 0);
    assert!(outcome.failures.is_empty());
    let content = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(content.lines().count(), 1);
    assert!(content.starts_with("subject,label,z_0"));
}

#[test]
fn archive_round_trip_through_gen_data() {
    let dir = TempDir::new().unwrap();
    let archive = dir.path().join("archive");
    let spec = SyntheticSpec {
        n_subjects: 2,
        n_classes: 2,
        channels: 3,
        timepoints: 16,
        trials_per_subject_class: 2,
        base_freqs: vec![1.0, 4.0],
        ..SyntheticSpec::default()
    };
    cmd_gen_data(&spec, &archive).unwrap();
    let loaded = load_archive::<f32>(&archive).unwrap();
    assert_eq!(loaded.len(), 8);
    assert_eq!(loaded[0].channels(), 3);
    assert_eq!(loaded[0].timepoints(), 16);
}

#[test]
fn checkpoint_shape_mismatch_is_reported() {
    let dir = TempDir::new().unwrap();
    let outcome = cmd_run(&smoke_experiment(), Some(dir.path()), None, 1, false).unwrap();
    assert!(outcome.failures.is_empty());
    let checkpoint = dir.path().join("checkpoints/smoke__seed1.ckpt");
    let archive = dir.path().join("wrong-shape");
    let spec = SyntheticSpec {
        n_subjects: 2,
        n_classes: 2,
        channels: 2,
        timepoints: 16,
        trials_per_subject_class: 2,
        base_freqs: vec![1.0, 4.0],
        ..SyntheticSpec::default()
    };
    cmd_gen_data(&spec, &archive).unwrap();
    let err = cmd_export_embeddings(&checkpoint, &archive, &dir.path().join("x.csv")).unwrap_err();
    assert!(err.to_string().contains("checkpoint expects"), "{err}");
}
