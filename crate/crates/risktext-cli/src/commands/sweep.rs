//! Grid sweeps: the pseudo-label proportion grid and the source mixing
//! grid. Each cell trains with the shorter sweep epoch budget and reports
//! validation macro-F1; cell failures are recorded and the sweep moves on.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use risktext::trainer::train as run_training;

use crate::config::{Approach, ExperimentConfig};
use crate::data::write_json;

use super::train::{assemble, load_gold_split, GoldSplit};

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub cell: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct SweepTable {
    version: u32,
    kind: String,
    epochs_per_cell: usize,
    rows: Vec<SweepRow>,
}

/// Either a proportion grid like "0.02,0.08,0.16,0.32" or a mixing grid
/// like "1:5,1:2,1:1,2:1,5:1".
pub enum Grid {
    Ratios(Vec<f64>),
    Mixes(Vec<(f64, f64)>),
}

pub fn parse_ratio_grid(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad ratio '{s}'"))
        })
        .collect()
}

pub fn parse_mix_grid(spec: &str) -> Result<Vec<(f64, f64)>> {
    spec.split(',')
        .map(|s| {
            let (a, b) = s
                .trim()
                .split_once(':')
                .with_context(|| format!("bad mix cell '{s}' (expected W1:W2)"))?;
            Ok((a.trim().parse::<f64>()?, b.trim().parse::<f64>()?))
        })
        .collect()
}

fn run_cell(
    config: &ExperimentConfig,
    gold: &GoldSplit,
    seed: u64,
    epochs: usize,
    ratio_override: Option<f64>,
    weights_override: Option<&[f64]>,
) -> Result<f64> {
    let setup = assemble(config, gold, seed, None, weights_override, ratio_override)?;
    let mut train_config = config.train_config(Some(epochs));
    train_config.seed = seed;
    let state = run_training(
        &setup.train_examples,
        &setup.valid_examples,
        &setup.vocab,
        setup.dims,
        &train_config,
        setup.initial,
    )?;
    Ok(state.best_valid_f1)
}

fn render_table(kind: &str, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{kind:<12}  macro-F1 (validation)\n"));
    out.push_str("------------  ---------------------\n");
    for row in rows {
        match (row.macro_f1, &row.error) {
            (Some(f1), _) => out.push_str(&format!("{:<12}  {f1:.3}\n", row.cell)),
            (None, Some(err)) => out.push_str(&format!("{:<12}  failed: {err}\n", row.cell)),
            (None, None) => out.push_str(&format!("{:<12}  -\n", row.cell)),
        }
    }
    out
}

pub fn run(
    config: &ExperimentConfig,
    grid: Grid,
    out_dir: &Path,
    seed: u64,
    epochs_override: Option<usize>,
) -> Result<()> {
    if !matches!(config.approach, Approach::Pl | Approach::PlMvl) {
        bail!("sweep needs a pseudo-labeling config (approach 'pl' or 'pl_mvl')");
    }
    std::fs::create_dir_all(out_dir)?;
    let epochs = epochs_override.unwrap_or(config.train.sweep_epochs);
    let gold = load_gold_split(config, seed)?;

    let (kind, rows) = match grid {
        Grid::Ratios(ratios) => {
            let mut rows = Vec::new();
            for (i, ratio) in ratios.iter().enumerate() {
                let cell = format!("{}%", ratio * 100.0);
                let cell_seed = risktext::seed::mix_seed(seed, i as u64);
                match run_cell(config, &gold, cell_seed, epochs, Some(*ratio), None) {
                    Ok(f1) => rows.push(SweepRow {
                        cell,
                        macro_f1: Some(f1),
                        error: None,
                    }),
                    Err(e) => rows.push(SweepRow {
                        cell,
                        macro_f1: None,
                        error: Some(format!("{e:#}")),
                    }),
                }
            }
            ("proportion", rows)
        }
        Grid::Mixes(mixes) => {
            if config.pl.as_ref().map_or(0, |pl| pl.sources.len()) != 2 {
                bail!("a mixing sweep needs exactly two [pl.sources]");
            }
            let mut rows = Vec::new();
            for (i, (w1, w2)) in mixes.iter().enumerate() {
                let cell = format!("{w1}:{w2}");
                let cell_seed = risktext::seed::mix_seed(seed, i as u64);
                let weights = [*w1, *w2];
                match run_cell(config, &gold, cell_seed, epochs, None, Some(&weights)) {
                    Ok(f1) => rows.push(SweepRow {
                        cell,
                        macro_f1: Some(f1),
                        error: None,
                    }),
                    Err(e) => rows.push(SweepRow {
                        cell,
                        macro_f1: None,
                        error: Some(format!("{e:#}")),
                    }),
                }
            }
            ("mix (1st:2nd)", rows)
        }
    };

    let table = SweepTable {
        version: 1,
        kind: kind.to_string(),
        epochs_per_cell: epochs,
        rows,
    };
    write_json(&out_dir.join("sweep.json"), &table)?;
    let text = render_table(kind, &table.rows);
    std::fs::write(out_dir.join("sweep.txt"), &text)?;
    print!("{text}");
    println!("out_dir: {}", out_dir.display());
    Ok(())
}
