//! Experiment runner for the risktext toolkit.
//!
//! Verbs: synth, preprocess, pretrain, train, eval, sweep, assess, report.
//! Every command is reproducible: the same config, seed, and inputs
//! produce byte-identical output files. Failures exit nonzero with one
//! machine-parsable JSON error line on stderr.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "risktext", version, about = "Weakly-supervised user-level risk classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic stand-in corpora used by the experiment grid.
    Synth {
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        /// Labeled training users (balanced over the four classes).
        #[arg(long, default_value_t = 200)]
        users: usize,
        /// Labeled test users.
        #[arg(long, default_value_t = 80)]
        test_users: usize,
        /// Users per auxiliary corpus (unlabeled, anxiety, depression, task C).
        #[arg(long, default_value_t = 120)]
        aux_users: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Preprocess a raw corpus into passage JSONL plus a summary.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        /// Corpus to process (defaults to the config's paths.train).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Task-adaptive pre-training on the unlabeled corpus.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train per the configured approach and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed run directory name (default: a fresh timestamped name).
        #[arg(long)]
        run_name: Option<String>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Encoder checkpoint to initialize from.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Evaluate a run's checkpoint on a labeled test corpus.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        /// Test corpus (defaults to the run config's paths.test).
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sweep pseudo-label proportions or mixing weights.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated ratios, e.g. "0.02,0.08,0.16,0.32".
        #[arg(long, conflicts_with = "mix_grid")]
        grid: Option<String>,
        /// Comma-separated weight pairs, e.g. "1:5,1:2,1:1,2:1,5:1".
        #[arg(long)]
        mix_grid: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the per-cell epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict every user of a corpus and report the risk distribution.
    Assess {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render a stored report or assessment file as text.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out_dir,
            users,
            test_users,
            aux_users,
            seed,
        } => commands::synth::run(&out_dir, users, test_users, aux_users, seed),
        Command::Preprocess {
            config,
            input,
            out_dir,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let out = out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
            commands::preprocess::run(&cfg, input.as_deref(), &out, seed)
        }
        Command::Pretrain {
            config,
            out_dir,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let out = out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
            commands::pretrain::run(&cfg, &out, seed)
        }
        Command::Train {
            config,
            out_dir,
            seed,
            run_name,
            epochs,
            init_checkpoint,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let out = out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
            commands::train::run(
                &cfg,
                &out,
                seed,
                run_name.as_deref(),
                epochs,
                init_checkpoint.as_deref(),
            )
        }
        Command::Eval {
            run_dir,
            test,
            out_dir,
        } => commands::eval::run(&run_dir, test.as_deref(), out_dir.as_deref()),
        Command::Sweep {
            config,
            grid,
            mix_grid,
            out_dir,
            seed,
            epochs,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let out = out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
            let parsed = match (grid, mix_grid) {
                (Some(g), None) => {
                    commands::sweep::Grid::Ratios(commands::sweep::parse_ratio_grid(&g)?)
                }
                (None, Some(m)) => {
                    commands::sweep::Grid::Mixes(commands::sweep::parse_mix_grid(&m)?)
                }
                _ => anyhow::bail!("sweep needs exactly one of --grid or --mix-grid"),
            };
            commands::sweep::run(&cfg, parsed, &out, seed, epochs)
        }
        Command::Assess {
            run_dir,
            corpus,
            out_dir,
        } => commands::assess::run(&run_dir, &corpus, out_dir.as_deref()),
        Command::Report { input } => commands::report::run(&input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
