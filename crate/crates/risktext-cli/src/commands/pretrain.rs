//! Task-adaptive pre-training: runs the MLM objective over the unlabeled
//! corpus and writes an encoder checkpoint plus the held-out loss curve.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use risktext::checkpoint::save_checkpoint;
use risktext::encoder::{build_vocabulary, EncoderDims};
use risktext::trainer::tap_pretrain;

use crate::config::ExperimentConfig;
use crate::data::{load_raw, prepare_dataset, write_json};

#[derive(Serialize)]
struct CurvePoint {
    epoch: usize,
    heldout_mlm_loss: f64,
}

#[derive(Serialize)]
struct Summary {
    epochs_run: usize,
    stopped_early: bool,
    final_heldout_loss: f64,
    uniform_baseline: f64,
    vocab_size: usize,
    passages: usize,
}

pub fn run(config: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<()> {
    let unlabeled_path = config
        .paths
        .unlabeled
        .as_ref()
        .context("pretrain needs paths.unlabeled")?;
    std::fs::create_dir_all(out_dir)?;

    let pp = config.preprocess.to_config(seed)?;
    let dataset = load_raw(unlabeled_path)?;
    let prepared = prepare_dataset(&dataset, &pp)?;
    let users = prepared.processed_users();
    if users.is_empty() {
        anyhow::bail!("unlabeled corpus is empty after preprocessing");
    }
    let passages: usize = users.iter().map(|u| u.passages.len()).sum();

    let vocab = build_vocabulary(&users, config.encoder.min_freq)?;
    let dims = EncoderDims {
        vocab_size: vocab.size(),
        dim: config.encoder.dim,
        layers: config.encoder.layers,
        max_len: config.preprocess.max_passage_len,
    };
    let mut train_config = config.train_config(None);
    train_config.seed = seed;

    let result = tap_pretrain(&users, &vocab, dims, &train_config)?;

    let checkpoint_path = out_dir.join("tap_checkpoint.rtck");
    save_checkpoint(&checkpoint_path, &result.encoder, None, &vocab)?;

    let mut curve = std::io::BufWriter::new(std::fs::File::create(out_dir.join("mlm_curve.jsonl"))?);
    for (i, loss) in result.heldout_losses.iter().enumerate() {
        serde_json::to_writer(
            &mut curve,
            &CurvePoint {
                epoch: i + 1,
                heldout_mlm_loss: *loss,
            },
        )?;
        curve.write_all(b"\n")?;
    }
    curve.flush()?;

    let summary = Summary {
        epochs_run: result.heldout_losses.len(),
        stopped_early: result.stopped_early,
        final_heldout_loss: *result.heldout_losses.last().unwrap(),
        uniform_baseline: (vocab.size() as f64).ln(),
        vocab_size: vocab.size(),
        passages,
    };
    write_json(&out_dir.join("pretrain_summary.json"), &summary)?;

    if result.stopped_early {
        println!(
            "early stop after epoch {} (no held-out improvement)",
            summary.epochs_run
        );
    }
    println!(
        "held-out MLM loss {:.4} (uniform baseline ln V = {:.4})",
        summary.final_heldout_loss, summary.uniform_baseline
    );
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}
