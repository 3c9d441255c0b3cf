//! Training runner: dispatches to the configured approach, assembles
//! pseudo-labeled data when requested, and writes the run directory
//! (config snapshot, per-epoch metrics log, best checkpoint, summary).

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use risktext::checkpoint::{load_checkpoint, save_checkpoint};
use risktext::corpus::{
    augment_training, build_pseudo_labeled, mix_pseudo_sources, round_half_up, sample_labeled,
    split_train_valid, LabeledDataset, MixComponent, MixSpec,
};
use risktext::encoder::{build_vocabulary, EncoderDims, EncoderParams, Vocabulary};
use risktext::seed::{mix_seed, stream_salt};
use risktext::trainer::{train as run_training, TrainExample, TrainState};

use crate::config::{Approach, ExperimentConfig, PlSection};
use crate::data::{create_run_dir, load_raw, prepare_dataset, write_json};

/// Gold train/valid datasets at the raw level, before any augmentation.
pub struct GoldSplit {
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
}

pub fn load_gold_split(config: &ExperimentConfig, seed: u64) -> Result<GoldSplit> {
    let train_path = config.paths.train.as_ref().context("config has no paths.train")?;
    let train_ds = load_raw(train_path)?;
    if let Some(valid_path) = &config.paths.valid {
        Ok(GoldSplit {
            train: train_ds,
            valid: load_raw(valid_path)?,
        })
    } else {
        let (train, valid) = split_train_valid(&train_ds, config.train.valid_fraction, seed)?;
        Ok(GoldSplit { train, valid })
    }
}

/// Builds the pseudo-labeled dataset of exactly `count` users from the
/// configured sources: a single source samples directly (keeping gold
/// labels when no `assigned` level is set); multiple sources are mixed by
/// weight. `weights_override` replaces the configured weights (sweep).
pub fn build_pseudo(
    pl: &PlSection,
    count: usize,
    seed: u64,
    weights_override: Option<&[f64]>,
) -> Result<LabeledDataset> {
    if let Some(w) = weights_override {
        if w.len() != pl.sources.len() {
            bail!("{} weights for {} sources", w.len(), pl.sources.len());
        }
    }
    if pl.sources.len() == 1 {
        let source = &pl.sources[0];
        let aux = load_raw(&source.path)?;
        let pseudo = match source.assigned_level()? {
            Some(level) => build_pseudo_labeled(&aux, level, count, seed, source.provenance())?,
            None => sample_labeled(&aux, count, seed, source.provenance())?,
        };
        return Ok(pseudo);
    }

    let mut sources_map = HashMap::new();
    let mut components = Vec::new();
    for (i, source) in pl.sources.iter().enumerate() {
        let level = source.assigned_level()?.ok_or_else(|| {
            anyhow::anyhow!("mix source '{}' needs an assigned label", source.id)
        })?;
        let weight = weights_override.map_or(source.weight, |w| w[i]);
        components.push(MixComponent {
            source_id: source.id.clone(),
            assigned: level,
            weight,
            provenance: source.provenance(),
        });
        sources_map.insert(source.id.clone(), load_raw(&source.path)?);
    }
    let spec = MixSpec {
        components,
        total_count: count,
    };
    Ok(mix_pseudo_sources(&spec, &sources_map, seed)?)
}

/// Everything needed for one training invocation.
pub struct TrainSetup {
    pub train_examples: Vec<TrainExample>,
    pub valid_examples: Vec<TrainExample>,
    pub vocab: Vocabulary,
    pub dims: EncoderDims,
    pub initial: Option<EncoderParams>,
    pub pseudo_added: usize,
    pub dropped_users: Vec<String>,
}

/// Assembles datasets, vocabulary, and the initial encoder per the
/// configured approach. `weights_override` feeds the mixing-proportion
/// sweep.
pub fn assemble(
    config: &ExperimentConfig,
    gold: &GoldSplit,
    seed: u64,
    init_checkpoint: Option<&Path>,
    weights_override: Option<&[f64]>,
    ratio_override: Option<f64>,
) -> Result<TrainSetup> {
    let pp = config.preprocess.to_config(seed)?;

    // Pseudo-label augmentation happens at the raw level so pseudo users
    // take the identical preprocessing path as gold users.
    let mut pseudo_added = 0usize;
    let train_ds = if matches!(config.approach, Approach::Pl | Approach::PlMvl) {
        let pl = config.pl.as_ref().expect("validated");
        let ratio = ratio_override.unwrap_or(pl.ratio);
        let count = round_half_up(ratio * gold.train.len() as f64);
        let pseudo = build_pseudo(pl, count, mix_seed(seed, stream_salt("pseudo")), weights_override)?;
        let augmented = augment_training(&gold.train, &pseudo, ratio)?;
        pseudo_added = augmented.len() - gold.train.len();
        augmented
    } else {
        gold.train.clone()
    };

    let prepared_train = prepare_dataset(&train_ds, &pp)?;
    let prepared_valid = prepare_dataset(&gold.valid, &pp)?;
    let mut dropped_users = prepared_train.dropped_users.clone();
    dropped_users.extend(prepared_valid.dropped_users.iter().cloned());

    let train_examples = prepared_train.examples()?;
    let valid_examples = prepared_valid.examples()?;

    // A pre-trained encoder pins the vocabulary and dims; otherwise build
    // fresh from the training corpus.
    let checkpoint_path: Option<PathBuf> = init_checkpoint
        .map(Path::to_path_buf)
        .or_else(|| config.paths.tap_checkpoint.clone());
    let (vocab, dims, initial) = match (&config.approach, checkpoint_path) {
        (Approach::Tap, Some(path)) => {
            let ckpt = load_checkpoint(&path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            (ckpt.vocab, ckpt.encoder.dims, Some(ckpt.encoder))
        }
        (Approach::Tap, None) => {
            bail!("approach 'tap' needs a pre-trained checkpoint; run `risktext pretrain` and set paths.tap_checkpoint (or pass --init-checkpoint)")
        }
        (_, maybe_path) => {
            if let Some(path) = maybe_path {
                let ckpt = load_checkpoint(&path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?;
                (ckpt.vocab, ckpt.encoder.dims, Some(ckpt.encoder))
            } else {
                let users: Vec<_> = train_examples.iter().map(|e| e.user.clone()).collect();
                let vocab = build_vocabulary(&users, config.encoder.min_freq)?;
                let dims = EncoderDims {
                    vocab_size: vocab.size(),
                    dim: config.encoder.dim,
                    layers: config.encoder.layers,
                    max_len: config.preprocess.max_passage_len,
                };
                (vocab, dims, None)
            }
        }
    };

    Ok(TrainSetup {
        train_examples,
        valid_examples,
        vocab,
        dims,
        initial,
        pseudo_added,
        dropped_users,
    })
}

#[derive(Serialize)]
struct RunSummary {
    approach: String,
    seed: u64,
    train_users: usize,
    valid_users: usize,
    pseudo_added: usize,
    best_epoch: usize,
    best_valid_f1: f64,
    epochs_run: usize,
    stopped_early: bool,
    dropped_users: Vec<String>,
}

pub fn write_run_dir(
    run_dir: &Path,
    config: &ExperimentConfig,
    setup: &TrainSetup,
    state: &TrainState,
    seed: u64,
) -> Result<()> {
    let mut snapshot = config.clone();
    snapshot.seed = seed;
    std::fs::write(run_dir.join("config.toml"), snapshot.to_toml()?)?;

    let mut log = std::io::BufWriter::new(std::fs::File::create(run_dir.join("metrics.jsonl"))?);
    for record in &state.history {
        serde_json::to_writer(&mut log, record)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;

    save_checkpoint(
        &run_dir.join("checkpoint.rtck"),
        &state.encoder,
        Some(&state.classifier),
        &setup.vocab,
    )?;

    write_json(
        &run_dir.join("summary.json"),
        &RunSummary {
            approach: config.approach.to_string(),
            seed,
            train_users: setup.train_examples.len(),
            valid_users: setup.valid_examples.len(),
            pseudo_added: setup.pseudo_added,
            best_epoch: state.best_epoch,
            best_valid_f1: state.best_valid_f1,
            epochs_run: state.history.len(),
            stopped_early: state.stopped_early,
            dropped_users: setup.dropped_users.clone(),
        },
    )?;
    Ok(())
}

pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    seed: u64,
    run_name: Option<&str>,
    epochs_override: Option<usize>,
    init_checkpoint: Option<&Path>,
) -> Result<()> {
    let gold = load_gold_split(config, seed)?;
    let setup = assemble(config, &gold, seed, init_checkpoint, None, None)?;
    if setup.pseudo_added > 0 {
        println!("+{} pseudo users", setup.pseudo_added);
    }

    let mut train_config = config.train_config(epochs_override);
    train_config.seed = seed;
    let state = run_training(
        &setup.train_examples,
        &setup.valid_examples,
        &setup.vocab,
        setup.dims,
        &train_config,
        setup.initial.clone(),
    )?;

    let run_dir = create_run_dir(out_dir, run_name)?;
    write_run_dir(&run_dir, config, &setup, &state, seed)?;

    println!(
        "best validation macro-F1 {:.4} at epoch {} ({} epochs run{})",
        state.best_valid_f1,
        state.best_epoch,
        state.history.len(),
        if state.stopped_early { ", early stop" } else { "" }
    );
    println!("run_dir: {}", run_dir.display());
    Ok(())
}
