//! Risk assessment over an unlabeled corpus: per-user predictions plus the
//! class-fraction distribution with the no-risk / any-risk split.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use risktext::checkpoint::load_checkpoint;
use risktext::metrics::{risk_distribution, RiskDistribution};
use risktext::trainer::{argmax_risk, classify_user};

use crate::data::{load_raw, prepare_dataset, write_json};

use super::eval::load_run_config;

#[derive(Serialize)]
struct PredictionLine {
    user_id: String,
    prediction: risktext::corpus::RiskLevel,
}

#[derive(Serialize)]
struct Assessment {
    version: u32,
    users_assessed: usize,
    distribution: RiskDistribution,
    dropped_users: Vec<String>,
}

pub fn run(run_dir: &Path, corpus: &Path, out_dir: Option<&Path>) -> Result<()> {
    let config = load_run_config(run_dir)?;
    let checkpoint = load_checkpoint(&run_dir.join("checkpoint.rtck"))?;
    let classifier = checkpoint
        .classifier
        .context("checkpoint has no classifier head")?;

    let pp = config.preprocess.to_config(config.seed)?;
    let dataset = load_raw(corpus)?;
    if dataset.is_empty() {
        bail!("assessment corpus {} is empty", corpus.display());
    }
    let prepared = prepare_dataset(&dataset, &pp)?;
    if prepared.users.is_empty() {
        bail!("assessment corpus is empty after preprocessing");
    }

    let out = out_dir.unwrap_or(run_dir);
    std::fs::create_dir_all(out)?;
    let mut lines = std::io::BufWriter::new(std::fs::File::create(out.join("predictions.jsonl"))?);
    let mut preds = Vec::with_capacity(prepared.users.len());
    for (user, _) in &prepared.users {
        let dist = classify_user(&checkpoint.encoder, &classifier, user, &checkpoint.vocab)?;
        let prediction = argmax_risk(dist.probs());
        preds.push(prediction);
        serde_json::to_writer(
            &mut lines,
            &PredictionLine {
                user_id: user.user_id.clone(),
                prediction,
            },
        )?;
        lines.write_all(b"\n")?;
    }
    lines.flush()?;

    let distribution = risk_distribution(&preds)?;
    let assessment = Assessment {
        version: 1,
        users_assessed: preds.len(),
        distribution: distribution.clone(),
        dropped_users: prepared.dropped_users,
    };
    write_json(&out.join("assessment.json"), &assessment)?;

    println!("assessed {} users", preds.len());
    println!(
        "a {:.2}%  b {:.2}%  c {:.2}%  d {:.2}%",
        distribution.fractions[0] * 100.0,
        distribution.fractions[1] * 100.0,
        distribution.fractions[2] * 100.0,
        distribution.fractions[3] * 100.0
    );
    println!(
        "no-risk {:.2}%  any-risk {:.2}%",
        distribution.no_risk * 100.0,
        distribution.any_risk * 100.0
    );
    println!("out_dir: {}", out.display());
    Ok(())
}
