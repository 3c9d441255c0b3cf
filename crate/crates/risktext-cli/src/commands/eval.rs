//! Evaluation against a labeled test corpus: loads a run's checkpoint,
//! predicts every user, and emits the full metrics report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use risktext::checkpoint::load_checkpoint;
use risktext::metrics::EvalReport;
use risktext::trainer::{argmax_risk, classify_user};

use crate::config::ExperimentConfig;
use crate::data::{load_raw, prepare_dataset, write_json};

pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    let path = run_dir.join("config.toml");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading run config {}", path.display()))?;
    let config: ExperimentConfig = toml::from_str(&text)?;
    Ok(config)
}

pub fn run(run_dir: &Path, test: Option<&Path>, out_dir: Option<&Path>) -> Result<()> {
    let config = load_run_config(run_dir)?;
    let checkpoint_path = run_dir.join("checkpoint.rtck");
    let checkpoint = load_checkpoint(&checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    let classifier = checkpoint
        .classifier
        .context("checkpoint has no classifier head; evaluate a training run, not a TAP checkpoint")?;

    let test_path: PathBuf = match test {
        Some(p) => p.to_path_buf(),
        None => config.paths.test.clone().context("no --test given and run config has no paths.test")?,
    };
    let pp = config.preprocess.to_config(config.seed)?;
    let dataset = load_raw(&test_path)?;
    let prepared = prepare_dataset(&dataset, &pp)?;
    let examples = prepared.examples().context("test corpus must be fully labeled")?;
    if examples.is_empty() {
        bail!("test corpus is empty after preprocessing");
    }

    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for ex in &examples {
        let dist = classify_user(&checkpoint.encoder, &classifier, &ex.user, &checkpoint.vocab)?;
        preds.push(argmax_risk(dist.probs()));
        golds.push(ex.label);
    }

    let report = EvalReport::from_predictions(&preds, &golds)?;
    let out = out_dir.unwrap_or(run_dir);
    std::fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    let text = report.render_text();
    std::fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    if !prepared.dropped_users.is_empty() {
        println!("dropped users (empty after preprocessing): {:?}", prepared.dropped_users);
    }
    Ok(())
}
