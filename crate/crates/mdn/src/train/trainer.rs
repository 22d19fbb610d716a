//! The joint training loop.
//!
//! Per epoch: subject statistics are refreshed from the current encoder,
//! the DDPM takes its own optimization step per batch (separate loss and
//! optimizer), and the main objective — scheduled classification +
//! reconstruction + contrastive — is backpropagated through the encoder,
//! projection head, decoder, and classifier. Optional mixup blends the raw,
//! denoised, and reconstructed pathways at a configurable point once the
//! warmup phase ends; during warmup the classifier is frozen and the
//! classification term is withheld from the optimized objective.

use super::config::TrainConfig;
use crate::data::{DatasetSplit, LabeledTrial};
use crate::error::{Error, Result};
use crate::mixup::{apply_temporal_mixup, build_temporal_mask, sample_mix_weights};
use crate::model::{
    ClassifierInput, DecoderInputVars, EncoderInput, ModelBundle, StatsMode, SubjectStats,
};
use crate::nn::{Graph, ParamGroup, Var};
use crate::objective::{
    ce_loss_graph, l1_graph, mse_graph, supcon_loss_graph, ClassificationKind, LossBreakdown,
};
use crate::scalar::{s, Scalar};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Loss values and validation accuracy for one epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord<S: Scalar> {
    pub loss: LossBreakdown<S>,
    pub ddpm_loss: Option<S>,
    pub val_accuracy: Option<S>,
}

#[derive(Debug, Clone)]
pub struct TrainHistory<S: Scalar> {
    pub epochs: Vec<EpochRecord<S>>,
    /// Subjects whose trials were consumed during training (weight updates
    /// or statistics); unseen-side subjects must never appear here.
    pub trained_subjects: BTreeSet<String>,
}

// Stream ids for the independent randomness consumers, all keyed by the run
// seed.
const STREAM_SHUFFLE: u64 = 0;
const STREAM_DDPM: u64 = 1;
const STREAM_DENOISE: u64 = 2;
const STREAM_MIXUP: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Train a fresh model on the split's training partition.
///
/// Fully deterministic given `config.seed`: every random draw comes from a
/// stream keyed by that seed.
pub fn train<S: Scalar>(
    config: &TrainConfig,
    split: &DatasetSplit<S>,
) -> Result<(ModelBundle<S>, TrainHistory<S>)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if split.n_classes != config.model.n_classes {
        return Err(Error::Config(format!(
            "model expects {} classes but the split holds {}",
            config.model.n_classes, split.n_classes
        )));
    }
    let shape = (config.model.channels, config.model.timepoints);
    for t in &split.train {
        if t.signal.dim() != shape {
            return Err(Error::Dimension(format!(
                "trial shape {:?} does not match model {:?}",
                t.signal.dim(),
                shape
            )));
        }
    }

    let mut bundle = ModelBundle::new(config.model.clone(), config.seed)?;
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut ddpm_rng = stream_rng(config.seed, STREAM_DDPM);
    let mut denoise_rng = stream_rng(config.seed, STREAM_DENOISE);
    let mut mixup_rng = stream_rng(config.seed, STREAM_MIXUP);

    let stats_subset = stats_subset(&split.train, config.stats_fraction);
    let lr = s::<S>(config.learning_rate);
    let ddpm_lr = s::<S>(config.ddpm_lr());

    let mut history = TrainHistory {
        epochs: Vec::with_capacity(config.epochs),
        trained_subjects: split
            .train
            .iter()
            .chain(&split.val)
            .map(|t| t.subject_id.clone())
            .collect(),
    };

    let mut indices: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..config.epochs {
        let stats = bundle.fit_stats_from_trials(&stats_subset, config.seed ^ epoch as u64)?;
        let warmup = config
            .mixup
            .as_ref()
            .is_some_and(|m| epoch < m.warmup_epochs);
        let mixup_active = config
            .mixup
            .as_ref()
            .is_some_and(|m| epoch >= m.warmup_epochs);
        let epoch_ratio = config
            .mixup
            .as_ref()
            .map(|m| m.epoch_ratio(&mut mixup_rng))
            .unwrap_or(0.5);

        indices.shuffle(&mut shuffle_rng);
        let mut sums = (S::zero(), S::zero(), S::zero(), S::zero());
        let mut ddpm_sum = S::zero();
        let mut batches = 0usize;

        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<&LabeledTrial<S>> = chunk.iter().map(|&i| &split.train[i]).collect();

            if config.model.use_ddpm {
                let refs: Vec<(&Array2<S>, usize)> =
                    batch.iter().map(|t| (&t.signal, t.label)).collect();
                ddpm_sum += bundle.ddpm_step(&refs, ddpm_lr, &mut ddpm_rng)?;
            }

            let breakdown = main_step(
                &mut bundle,
                config,
                &batch,
                &stats,
                epoch,
                warmup,
                mixup_active,
                epoch_ratio,
                lr,
                &mut denoise_rng,
                &mut mixup_rng,
            )?;
            sums.0 += breakdown.classification;
            sums.1 += breakdown.reconstruction;
            sums.2 += breakdown.contrastive;
            sums.3 += breakdown.total;
            batches += 1;
        }

        let nb = s::<S>(batches.max(1) as f64);
        let val_accuracy = if split.val.is_empty() {
            None
        } else {
            Some(accuracy_on(
                &bundle,
                &split.val,
                &stats,
                StatsMode::Seen,
                config.seed ^ 0x5A17,
            )?)
        };
        history.epochs.push(EpochRecord {
            loss: LossBreakdown {
                classification: sums.0 / nb,
                reconstruction: sums.1 / nb,
                contrastive: sums.2 / nb,
                total: sums.3 / nb,
            },
            ddpm_loss: if config.model.use_ddpm {
                Some(ddpm_sum / nb)
            } else {
                None
            },
            val_accuracy,
        });
    }

    // Final statistics for seen-subject evaluation come from the trained
    // encoder over the full training partition.
    bundle.train_stats = Some(bundle.fit_stats_from_trials(&split.train, config.seed ^ 0xF17)?);
    Ok((bundle, history))
}

/// At least two trials per subject, scaled by `fraction`.
fn stats_subset<S: Scalar>(train: &[LabeledTrial<S>], fraction: f64) -> Vec<LabeledTrial<S>> {
    let mut by_subject: BTreeMap<&str, Vec<&LabeledTrial<S>>> = BTreeMap::new();
    for t in train {
        by_subject.entry(t.subject_id.as_str()).or_default().push(t);
    }
    let mut subset = Vec::new();
    for (_, trials) in by_subject {
        let take = ((fraction * trials.len() as f64).ceil() as usize)
            .max(2)
            .min(trials.len());
        subset.extend(trials[..take].iter().map(|&t| t.clone()));
    }
    subset
}

struct PathwaySources<S: Scalar> {
    denoised: Option<Array2<S>>,
    decoded_plain: Option<Array2<S>>,
}

#[allow(clippy::too_many_arguments)]
fn main_step<S: Scalar>(
    bundle: &mut ModelBundle<S>,
    config: &TrainConfig,
    batch: &[&LabeledTrial<S>],
    stats: &SubjectStats<S>,
    epoch: usize,
    warmup: bool,
    mixup_active: bool,
    epoch_ratio: f64,
    lr: S,
    denoise_rng: &mut ChaCha8Rng,
    mixup_rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown<S>> {
    let mut g = Graph::new();
    let labels: Vec<usize> = batch.iter().map(|t| t.label).collect();
    let mut logit_cols = Vec::with_capacity(batch.len());
    let mut proj_cols = Vec::with_capacity(batch.len());
    let mut recon_terms: Vec<Var> = Vec::new();

    // Detached per-trial sources computed up front.
    // The denoised signal is needed as the reconstruction target, as a mixup
    // source, and wherever an x_hat consumer is configured.
    let wants_denoised =
        bundle.config.use_ddpm && (bundle.config.use_decoder || bundle.config.needs_denoised());
    let mut sources = Vec::with_capacity(batch.len());
    for trial in batch {
        let denoised = if wants_denoised {
            Some(bundle.denoise(&trial.signal, Some(trial.label), denoise_rng)?)
        } else {
            None
        };
        let decoded_plain = if mixup_active {
            // Unmixed plain forward supplies the reconstruction pathway that
            // mixup splices in.
            let enc_in = match bundle.config.encoder_input {
                EncoderInput::X => trial.signal.clone(),
                EncoderInput::XHat => denoised.clone().unwrap(),
            };
            let features = bundle.encoder.encode(&bundle.store, &enc_in)?;
            let (z, _) = bundle
                .encoder
                .attention_pool(&bundle.store, &features.dn3)?;
            let decoder = bundle.decoder.as_ref().expect("mixup requires the decoder");
            Some(decoder.decode(
                &bundle.store,
                &bundle.config.decoder_input,
                crate::model::DecoderInputs {
                    z: Some(&z),
                    x: Some(&trial.signal),
                    x_hat: denoised.as_ref(),
                    skips: Some(&features),
                },
            )?)
        } else {
            None
        };
        sources.push(PathwaySources {
            denoised,
            decoded_plain,
        });
    }

    for (trial, source) in batch.iter().zip(&sources) {
        let mixup_layer = config.mixup.as_ref().map(|m| m.layer);
        let enc_in_plain = match bundle.config.encoder_input {
            EncoderInput::X => &trial.signal,
            EncoderInput::XHat => source.denoised.as_ref().unwrap(),
        };

        // Encoder pathway(s) with the configured mixing point.
        let (dn1, dn2, dn3) = if mixup_active && matches!(mixup_layer, Some(-1) | Some(0)) {
            let layer = mixup_layer.unwrap();
            let mcfg = config.mixup.as_ref().unwrap();
            let x_hat = source.denoised.as_ref().unwrap();
            let x_dec = source.decoded_plain.as_ref().unwrap();
            let mixed = if layer == -1 {
                let (c, t) = trial.signal.dim();
                let mask = build_temporal_mask(c, t, mcfg, epoch_ratio, mixup_rng);
                apply_temporal_mixup(&trial.signal, x_hat, x_dec, &mask)?
            } else {
                let weights = sample_mix_weights::<S>(mcfg.ratio_mode, 3, mixup_rng)?;
                crate::mixup::weighted_average_mix(&[&trial.signal, x_hat, x_dec], &weights)?
            };
            let xv = g.constant(mixed);
            let dn1 = bundle.encoder.block1_graph(&mut g, &bundle.store, xv);
            let dn2 = bundle.encoder.block2_graph(&mut g, &bundle.store, dn1);
            let dn3 = bundle.encoder.block3_graph(&mut g, &bundle.store, dn2);
            (dn1, dn2, dn3)
        } else if mixup_active && matches!(mixup_layer, Some(1) | Some(2) | Some(3)) {
            let layer = mixup_layer.unwrap() as usize;
            let mcfg = config.mixup.as_ref().unwrap();
            let weights = sample_mix_weights::<S>(mcfg.ratio_mode, 3, mixup_rng)?;
            let inputs = [
                trial.signal.clone(),
                source.denoised.clone().unwrap(),
                source.decoded_plain.clone().unwrap(),
            ];
            // Run the three pathways up to the mixing block, then blend and
            // continue a single stream. Earlier skip scales come from the
            // raw-signal pathway.
            let mut pathway_dn1 = Vec::new();
            let mut pathway_dn2 = Vec::new();
            let mut acts = Vec::new();
            for input in &inputs {
                let xv = g.constant(input.clone());
                let dn1 = bundle.encoder.block1_graph(&mut g, &bundle.store, xv);
                if layer == 1 {
                    pathway_dn1.push(dn1);
                    acts.push(dn1);
                    continue;
                }
                let dn2 = bundle.encoder.block2_graph(&mut g, &bundle.store, dn1);
                if layer == 2 {
                    pathway_dn1.push(dn1);
                    pathway_dn2.push(dn2);
                    acts.push(dn2);
                    continue;
                }
                let dn3 = bundle.encoder.block3_graph(&mut g, &bundle.store, dn2);
                pathway_dn1.push(dn1);
                pathway_dn2.push(dn2);
                acts.push(dn3);
            }
            let mut mixed = g.scale(acts[0], weights[0]);
            for (a, &w) in acts[1..].iter().zip(&weights[1..]) {
                let term = g.scale(*a, w);
                mixed = g.add(mixed, term);
            }
            match layer {
                1 => {
                    let dn2 = bundle.encoder.block2_graph(&mut g, &bundle.store, mixed);
                    let dn3 = bundle.encoder.block3_graph(&mut g, &bundle.store, dn2);
                    (mixed, dn2, dn3)
                }
                2 => {
                    let dn3 = bundle.encoder.block3_graph(&mut g, &bundle.store, mixed);
                    (pathway_dn1[0], mixed, dn3)
                }
                _ => (pathway_dn1[0], pathway_dn2[0], mixed),
            }
        } else {
            let xv = g.constant(enc_in_plain.clone());
            let dn1 = bundle.encoder.block1_graph(&mut g, &bundle.store, xv);
            let dn2 = bundle.encoder.block2_graph(&mut g, &bundle.store, dn1);
            let dn3 = bundle.encoder.block3_graph(&mut g, &bundle.store, dn2);
            (dn1, dn2, dn3)
        };

        let z = if mixup_active && mixup_layer == Some(4) {
            let mcfg = config.mixup.as_ref().unwrap();
            let weights = sample_mix_weights::<S>(mcfg.ratio_mode, 3, mixup_rng)?;
            // Latent-level blend: pool the already-built pathway, then pool
            // the denoised and reconstructed pathways too.
            let z_main = bundle
                .encoder
                .attention_pool_graph(&mut g, &bundle.store, dn3);
            let mut zs = vec![z_main];
            for alt in [
                source.denoised.as_ref().unwrap(),
                source.decoded_plain.as_ref().unwrap(),
            ] {
                let xv = g.constant(alt.clone());
                let z_alt = bundle
                    .encoder
                    .encode_pooled_graph(&mut g, &bundle.store, xv);
                zs.push(z_alt);
            }
            let mut mixed = g.scale(zs[0], weights[0]);
            for (zv, &w) in zs[1..].iter().zip(&weights[1..]) {
                let term = g.scale(*zv, w);
                mixed = g.add(mixed, term);
            }
            mixed
        } else {
            bundle
                .encoder
                .attention_pool_graph(&mut g, &bundle.store, dn3)
        };

        // Subject normalization with this epoch's statistics as constants.
        let (mean, sd) = stats.get(&trial.subject_id).ok_or_else(|| {
            Error::Lookup(format!(
                "subject {} missing from training statistics",
                trial.subject_id
            ))
        })?;
        let d = mean.len();
        let mu = Array2::from_shape_fn((d, 1), |(i, _)| mean[i]);
        let inv_sigma = Array2::from_shape_fn((d, 1), |(i, _)| S::one() / sd[i]);
        let mu_c = g.constant(mu.mapv(|v| -v));
        let centered = g.add_colvec(z, mu_c);
        let inv = g.constant(inv_sigma);
        let z_norm = g.mul(centered, inv);

        let proj = bundle
            .projection
            .project_graph(&mut g, &bundle.store, z_norm);
        proj_cols.push(proj);

        // Decoder on the tape (reconstruction path).
        let decoded = if let Some(decoder) = &bundle.decoder {
            let xv = g.constant(trial.signal.clone());
            let xh = source.denoised.as_ref().map(|v| g.constant(v.clone()));
            let out = decoder.decode_graph(
                &mut g,
                &bundle.store,
                &bundle.config.decoder_input,
                &DecoderInputVars {
                    z: Some(z),
                    x: Some(xv),
                    x_hat: xh,
                    skips: Some((dn1, dn2, dn3)),
                },
            )?;
            Some(out)
        } else {
            None
        };

        // Reconstruction target: the denoised signal (detached or coupled),
        // or the raw input when the DDPM is ablated away.
        if let Some(decoded) = decoded {
            let target = if bundle.config.use_ddpm {
                if config.couple_recon_target {
                    let predictor = bundle.predictor.as_ref().unwrap();
                    let noises =
                        predictor.sample_denoise_noises::<S>(trial.signal.dim(), denoise_rng);
                    predictor.denoise_graph(
                        &mut g,
                        &bundle.store,
                        &trial.signal,
                        Some(trial.label),
                        &noises,
                    )?
                } else {
                    g.constant(source.denoised.clone().unwrap())
                }
            } else {
                g.constant(trial.signal.clone())
            };
            recon_terms.push(l1_graph(&mut g, decoded, target));
        }

        let logits = match bundle.config.classifier.input {
            ClassifierInput::X => {
                let xv = g.constant(trial.signal.clone());
                bundle.classifier.classify_graph(&mut g, &bundle.store, xv)
            }
            ClassifierInput::XHat => {
                let xv = g.constant(source.denoised.clone().ok_or_else(|| {
                    Error::Config("classifier needs x_hat but DDPM is off".into())
                })?);
                bundle.classifier.classify_graph(&mut g, &bundle.store, xv)
            }
            ClassifierInput::DecoderOut => {
                let dv = decoded.ok_or_else(|| {
                    Error::Config("classifier needs decoder_out but decoder is off".into())
                })?;
                bundle.classifier.classify_graph(&mut g, &bundle.store, dv)
            }
            ClassifierInput::Z => bundle
                .classifier
                .classify_graph(&mut g, &bundle.store, z_norm),
        };
        logit_cols.push(logits);
    }

    // Batch losses.
    let logits = g.stack_cols(&logit_cols);
    let classification = match config.loss.classification_kind {
        ClassificationKind::Ce => ce_loss_graph(&mut g, logits, &labels),
        ClassificationKind::Mse => {
            let k = bundle.config.n_classes;
            let mut target = Array2::zeros((k, labels.len()));
            for (b, &y) in labels.iter().enumerate() {
                target[[y, b]] = S::one();
            }
            let soft = g.softmax_cols(logits);
            mse_graph(&mut g, soft, target)
        }
    };
    let reconstruction = if recon_terms.is_empty() {
        g.constant(Array2::zeros((1, 1)))
    } else {
        let mut acc = recon_terms[0];
        for term in &recon_terms[1..] {
            acc = g.add(acc, *term);
        }
        g.scale(acc, S::one() / s::<S>(recon_terms.len() as f64))
    };
    let projections = g.stack_cols(&proj_cols);
    let contrastive = supcon_loss_graph(&mut g, projections, &labels, s::<S>(config.loss.tau));

    let alpha = s::<S>(config.loss.alpha);
    let beta = config.loss.schedule_beta::<S>(epoch);
    let gamma = config.loss.schedule_gamma::<S>(epoch);
    let weighted_recon = g.scale(reconstruction, beta);
    let weighted_con = g.scale(contrastive, gamma);
    let generator_objective = g.add(weighted_recon, weighted_con);
    let weighted_cls = g.scale(classification, alpha);
    let full_objective = g.add(weighted_cls, generator_objective);

    let breakdown = LossBreakdown {
        classification: g.scalar_value(classification),
        reconstruction: g.scalar_value(reconstruction),
        contrastive: g.scalar_value(contrastive),
        total: g.scalar_value(full_objective),
    };

    // During warmup only the generator terms drive updates and the
    // classifier stays frozen.
    let objective = if warmup {
        generator_objective
    } else {
        full_objective
    };
    let grads = g.backward(objective);
    bundle.store.adam_step(&grads.by_param(), lr, |group| {
        group.in_main() && !(warmup && group == ParamGroup::Classifier)
    });
    Ok(breakdown)
}

/// Fraction of correct predictions on `trials` under the given statistics.
pub fn accuracy_on<S: Scalar>(
    bundle: &ModelBundle<S>,
    trials: &[LabeledTrial<S>],
    stats: &SubjectStats<S>,
    mode: StatsMode,
    eval_seed: u64,
) -> Result<S> {
    if trials.is_empty() {
        return Err(Error::Dimension(
            "cannot evaluate an empty trial list".into(),
        ));
    }
    let mut correct = 0usize;
    for (i, trial) in trials.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
        rng.set_stream(i as u64);
        let fwd = bundle.forward_trial(
            &trial.signal,
            &trial.subject_id,
            Some((stats, mode)),
            &mut rng,
        )?;
        let pred = fwd
            .logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == trial.label {
            correct += 1;
        }
    }
    Ok(s::<S>(correct as f64) / s::<S>(trials.len() as f64))
}

/// Softmax over a logit vector.
pub fn softmax_vec<S: Scalar>(logits: &ndarray::Array1<S>) -> ndarray::Array1<S> {
    let col = logits.clone().insert_axis(Axis(1));
    let soft = crate::nn::kernels::softmax_cols(&col);
    soft.index_axis(Axis(1), 0).to_owned()
}
