//! Corpus preprocessing: emits the processed JSONL plus a summary with
//! user counts, passage counts, a word-count histogram, and the users
//! dropped for normalizing to nothing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use risktext::preprocess::save_processed;

use crate::config::ExperimentConfig;
use crate::data::{load_raw, prepare_dataset, write_json};

#[derive(Serialize)]
struct Summary {
    users_in: usize,
    users_out: usize,
    passage_count: usize,
    passage_word_histogram: BTreeMap<String, usize>,
    dropped_users: Vec<String>,
}

fn bucket_label(words: usize, max_len: usize) -> String {
    if words > max_len {
        format!("{:03}+", max_len + 1)
    } else {
        let lo = (words.saturating_sub(1) / 16) * 16 + 1;
        format!("{:03}-{:03}", lo, lo + 15)
    }
}

pub fn run(
    config: &ExperimentConfig,
    input: Option<&Path>,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    let input: PathBuf = match input {
        Some(p) => p.to_path_buf(),
        None => config
            .paths
            .train
            .clone()
            .context("no --input given and config has no paths.train")?,
    };
    std::fs::create_dir_all(out_dir)?;

    let pp = config.preprocess.to_config(seed)?;
    let dataset = load_raw(&input)?;
    let prepared = prepare_dataset(&dataset, &pp)?;

    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let mut passage_count = 0usize;
    for (user, _) in &prepared.users {
        for passage in &user.passages {
            passage_count += 1;
            *histogram
                .entry(bucket_label(passage.word_count(), pp.max_passage_len))
                .or_insert(0) += 1;
        }
    }

    save_processed(&prepared.users, &out_dir.join("processed.jsonl"))?;
    let summary = Summary {
        users_in: dataset.len(),
        users_out: prepared.users.len(),
        passage_count,
        passage_word_histogram: histogram,
        dropped_users: prepared.dropped_users,
    };
    write_json(&out_dir.join("preprocess_summary.json"), &summary)?;

    println!(
        "preprocessed {} users ({} dropped), {} passages",
        summary.users_out,
        summary.dropped_users.len(),
        summary.passage_count
    );
    println!("out_dir: {}", out_dir.display());
    Ok(())
}
