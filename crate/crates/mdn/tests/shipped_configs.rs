//! Every experiment config shipped under `configs/` must parse and
//! materialize into valid training configurations for its declared data.

use mdn::data::generate_synthetic;
use mdn::exp::{DataSource, ExperimentConfig};
use std::path::Path;

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_materialize() {
    let dir = configs_dir();
    let mut checked = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let experiment = ExperimentConfig::from_json_file(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let DataSource::Synthetic(spec) = &experiment.data else {
            panic!("{}: shipped configs use synthetic data", path.display());
        };
        // One trial is enough to pin the shape.
        let trials = generate_synthetic::<f32>(spec).unwrap();
        let (c, t) = (trials[0].channels(), trials[0].timepoints());
        for run in &experiment.configs {
            run.to_train_config(c, t, spec.n_classes)
                .unwrap_or_else(|e| panic!("{} / {}: {e}", path.display(), run.name));
        }
        checked += 1;
    }
    assert!(
        checked >= 6,
        "expected the shipped config set, found {checked}"
    );
}

#[test]
fn grids_cover_the_studied_combinations() {
    let dir = configs_dir();
    let decoder = ExperimentConfig::from_json_file(&dir.join("decoder_inputs.json")).unwrap();
    assert_eq!(decoder.configs.len(), 9);
    let classifier = ExperimentConfig::from_json_file(&dir.join("classifier_heads.json")).unwrap();
    assert_eq!(classifier.configs.len(), 7);
    let architecture = ExperimentConfig::from_json_file(&dir.join("architecture.json")).unwrap();
    assert_eq!(architecture.configs.len(), 6);
    let loss = ExperimentConfig::from_json_file(&dir.join("loss_grid.json")).unwrap();
    assert_eq!(loss.configs.len(), 16);
    let mixup = ExperimentConfig::from_json_file(&dir.join("mixup_grid.json")).unwrap();
    assert_eq!(mixup.configs.len(), 24);
}
