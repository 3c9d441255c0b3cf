//! Corpus ingestion glue: format sniffing, preprocessing with drop
//! tracking, and run-directory helpers.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use risktext::corpus::{load_corpus, CorpusFormat, LabeledDataset, RiskLevel};
use risktext::preprocess::{preprocess_user, PreprocessConfig, ProcessedUser};
use risktext::trainer::TrainExample;

/// Whether a JSONL corpus file holds raw posts or preprocessed passages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Raw,
    Processed,
}

/// Decides the corpus kind from the first non-empty line's fields.
pub fn sniff_corpus(path: &Path) -> Result<CorpusKind> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening corpus {}", path.display()))?;
    let reader = std::io::BufReader::new(file);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("sniffing {}", path.display()))?;
        if value.get("posts").is_some() {
            return Ok(CorpusKind::Raw);
        }
        if value.get("passages").is_some() {
            return Ok(CorpusKind::Processed);
        }
        bail!(
            "{}: first line has neither 'posts' nor 'passages'",
            path.display()
        );
    }
    // Empty files are treated as empty raw corpora.
    Ok(CorpusKind::Raw)
}

/// A preprocessed corpus plus the users dropped for normalizing to nothing.
pub struct PreparedCorpus {
    pub users: Vec<(ProcessedUser, Option<RiskLevel>)>,
    pub dropped_users: Vec<String>,
}

impl PreparedCorpus {
    /// Labeled subset as training examples; errors if any user is
    /// unlabeled.
    pub fn examples(&self) -> Result<Vec<TrainExample>> {
        self.users
            .iter()
            .map(|(user, label)| {
                let label = label.ok_or_else(|| {
                    anyhow::anyhow!("user '{}' has no label", user.user_id)
                })?;
                Ok(TrainExample {
                    user: user.clone(),
                    label,
                })
            })
            .collect()
    }

    pub fn processed_users(&self) -> Vec<ProcessedUser> {
        self.users.iter().map(|(u, _)| u.clone()).collect()
    }
}

/// Preprocesses a raw dataset, collecting (not failing on) users whose
/// text normalizes to nothing.
pub fn prepare_dataset(
    dataset: &LabeledDataset,
    config: &PreprocessConfig,
) -> Result<PreparedCorpus> {
    let mut users = Vec::with_capacity(dataset.len());
    let mut dropped_users = Vec::new();
    for entry in dataset.iter() {
        match preprocess_user(&entry.user, config) {
            Ok(processed) => users.push((processed, entry.label)),
            Err(risktext::Error::EmptyAfterPreprocessing { user_id }) => {
                dropped_users.push(user_id);
            }
            Err(e) => return Err(e).context("preprocessing failed"),
        }
    }
    Ok(PreparedCorpus {
        users,
        dropped_users,
    })
}

/// Loads a corpus that must be raw. All ingestion happens at the raw
/// level so pseudo-labeled users take the identical preprocessing path as
/// gold users; preprocessed JSONL is an export format (see the
/// `preprocess` verb and `risktext::preprocess::load_processed`).
pub fn load_raw(path: &Path) -> Result<LabeledDataset> {
    match sniff_corpus(path)? {
        CorpusKind::Raw => Ok(load_corpus(path, CorpusFormat::Jsonl)?),
        CorpusKind::Processed => bail!(
            "{}: expected a raw corpus (pseudo-label sources must be raw so they share the gold preprocessing path)",
            path.display()
        ),
    }
}

/// Creates a fresh run directory; run directories are append-only, so an
/// existing path is an error.
pub fn create_run_dir(out_dir: &Path, run_name: Option<&str>) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let name = match run_name {
        Some(n) => n.to_string(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
            // Suffix for collisions within one second.
            let mut candidate = format!("run-{stamp}");
            let mut counter = 1;
            while out_dir.join(&candidate).exists() {
                candidate = format!("run-{stamp}-{counter}");
                counter += 1;
            }
            candidate
        }
    };
    let dir = out_dir.join(&name);
    if dir.exists() {
        bail!("run directory {} already exists (runs are append-only)", dir.display());
    }
    std::fs::create_dir(&dir)?;
    Ok(dir)
}

/// Deterministic pretty-printed JSON file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
