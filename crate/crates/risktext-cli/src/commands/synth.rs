//! Synthetic corpus generation: materializes the desk-scale stand-in
//! corpora referenced by the shipped experiment configs.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use risktext::corpus::{
    generate_profile_corpus, generate_with_prefix, save_corpus, RiskLevel, SyntheticSpec,
};
use risktext::seed::mix_seed;

use crate::data::write_json;

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    users: usize,
    labeled: bool,
}

pub fn run(out_dir: &Path, users: usize, test_users: usize, aux_users: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let spec = SyntheticSpec::separable(12);

    let mut files = Vec::new();
    let mut emit = |name: &str, ds: &risktext::corpus::LabeledDataset, labeled: bool| -> Result<()> {
        save_corpus(ds, &out_dir.join(name))?;
        files.push(FileEntry {
            name: name.to_string(),
            users: ds.len(),
            labeled,
        });
        println!("{name}: {} users", ds.len());
        Ok(())
    };

    let train = generate_with_prefix(&spec, users, mix_seed(seed, 1), "train", true)?;
    emit("train.jsonl", &train, true)?;
    let test = generate_with_prefix(&spec, test_users, mix_seed(seed, 2), "test", true)?;
    emit("test.jsonl", &test, true)?;
    let unlabeled = generate_with_prefix(&spec, aux_users, mix_seed(seed, 3), "unl", false)?;
    emit("unlabeled.jsonl", &unlabeled, false)?;
    let anxiety =
        generate_profile_corpus(&spec, RiskLevel::LowRisk, aux_users, mix_seed(seed, 4), "anx", false)?;
    emit("anxiety.jsonl", &anxiety, false)?;
    let depression = generate_profile_corpus(
        &spec,
        RiskLevel::MediumRisk,
        aux_users,
        mix_seed(seed, 5),
        "dep",
        false,
    )?;
    emit("depression.jsonl", &depression, false)?;
    let taskc = generate_with_prefix(&spec, aux_users, mix_seed(seed, 6), "taskc", true)?;
    emit("taskc.jsonl", &taskc, true)?;

    write_json(&out_dir.join("manifest.json"), &Manifest { seed, files })?;
    println!("out_dir: {}", out_dir.display());
    Ok(())
}
