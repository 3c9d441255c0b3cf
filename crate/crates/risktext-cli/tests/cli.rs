//! End-to-end tests of the command-line surface: every verb, the error
//! paths, and reproducibility of emitted artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_risktext")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

/// Small synthetic corpora shared by most tests.
fn setup_data(dir: &Path) {
    run_ok(
        dir,
        &[
            "synth", "--out-dir", "data", "--users", "60", "--test-users", "24", "--aux-users",
            "30", "--seed", "42",
        ],
    );
}

fn small_config(approach_lines: &str) -> String {
    format!(
        r#"
version = 1
approach = {approach_lines}
seed = 7

[paths]
train = "data/train.jsonl"
test = "data/test.jsonl"
out_dir = "runs"

[encoder]
dim = 16
layers = 1

[train]
epochs = 3
batch_size = 8
learning_rate = 0.003
"#
    )
}

#[test]
fn preprocess_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    write(dir.path(), "config.toml", &small_config("\"baseline\""));

    run_ok(dir.path(), &["preprocess", "--config", "config.toml", "--out-dir", "p1"]);
    run_ok(dir.path(), &["preprocess", "--config", "config.toml", "--out-dir", "p2"]);

    let a = std::fs::read(dir.path().join("p1/processed.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("p2/processed.jsonl")).unwrap();
    assert_eq!(a, b, "processed corpus differs between identical runs");
    let lines = a.split(|&c| c == b'\n').filter(|l| !l.is_empty()).count();
    assert_eq!(lines, 60, "one line per user");

    let sa = std::fs::read(dir.path().join("p1/preprocess_summary.json")).unwrap();
    let sb = std::fs::read(dir.path().join("p2/preprocess_summary.json")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn preprocess_reports_dropped_users() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    // One user whose whole text is stopwords, one real user.
    let corpus = concat!(
        r#"{"user_id":"ghost","posts":[{"post_id":"p0","subreddit":"s","title":"the","body":"and then again of"}]}"#,
        "\n",
        r#"{"user_id":"real","posts":[{"post_id":"p0","subreddit":"s","title":"quiet","body":"nothing helps lately. sleep rarely comes."}]}"#,
        "\n"
    );
    write(dir.path(), "mixed.jsonl", corpus);
    write(dir.path(), "config.toml", &small_config("\"baseline\""));
    run_ok(
        dir.path(),
        &["preprocess", "--config", "config.toml", "--input", "mixed.jsonl", "--out-dir", "out"],
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/preprocess_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["users_in"], 2);
    assert_eq!(summary["users_out"], 1);
    assert_eq!(summary["dropped_users"][0], "ghost");
}

#[test]
fn pretrain_then_tap_training_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    let config = small_config("\"tap\"").replace(
        "[paths]",
        "[paths]\nunlabeled = \"data/unlabeled.jsonl\"\ntap_checkpoint = \"tap/tap_checkpoint.rtck\"",
    ) + "tap_epochs = 2\ntap_patience = 2\n";
    write(dir.path(), "tap.toml", &config);

    run_ok(dir.path(), &["pretrain", "--config", "tap.toml", "--out-dir", "tap"]);
    assert!(dir.path().join("tap/tap_checkpoint.rtck").exists());
    let curve = std::fs::read_to_string(dir.path().join("tap/mlm_curve.jsonl")).unwrap();
    let points: Vec<serde_json::Value> = curve
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(points.len(), 2, "one curve record per epoch");
    assert_eq!(points[0]["epoch"], 1);

    // The checkpoint loads back into fine-tuning.
    let stdout = run_ok(dir.path(), &["train", "--config", "tap.toml", "--run-name", "tap-run"]);
    assert!(stdout.contains("run_dir:"));
    assert!(dir.path().join("runs/tap-run/checkpoint.rtck").exists());
}

#[test]
fn pl_training_logs_added_pseudo_users() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    let config = small_config("\"pl\"")
        + r#"
[pl]
ratio = 0.08

[[pl.sources]]
id = "depression"
path = "data/depression.jsonl"
assigned = "c"
"#;
    write(dir.path(), "pl.toml", &config);
    let stdout = run_ok(dir.path(), &["train", "--config", "pl.toml", "--run-name", "pl-run"]);
    // 60 users, 20% stratified validation leaves 48; round(0.08 * 48) = 4.
    assert!(stdout.contains("+4 pseudo users"), "stdout: {stdout}");
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/pl-run/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["pseudo_added"], 4);
    assert_eq!(summary["train_users"], 52);
}

#[test]
fn mvl_metrics_log_has_kl_column() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    let config = small_config("\"mvl\"") + "\n[view]\nkind = \"word_mask\"\nmask_rate = 0.2\n";
    write(dir.path(), "mvl.toml", &config);
    run_ok(dir.path(), &["train", "--config", "mvl.toml", "--run-name", "mvl-run"]);
    let log = std::fs::read_to_string(dir.path().join("runs/mvl-run/metrics.jsonl")).unwrap();
    let records: Vec<serde_json::Value> =
        log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty());
    for r in &records {
        assert!(r.get("kl_loss").is_some(), "missing kl column: {r}");
    }
    assert!(records.iter().any(|r| r["kl_loss"].as_f64().unwrap() > 0.0));
}

#[test]
fn approach_field_mismatch_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    let config = small_config("\"baseline\"") + "\n[view]\nkind = \"word_mask\"\n";
    write(dir.path(), "bad.toml", &config);
    let out = run_in(dir.path(), &["train", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(line).expect("machine-parsable error line");
    assert!(parsed["error"].as_str().unwrap().contains("[view]"));
}

#[test]
fn eval_report_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    write(dir.path(), "config.toml", &small_config("\"baseline\""));
    run_ok(dir.path(), &["train", "--config", "config.toml", "--run-name", "r1"]);

    run_ok(dir.path(), &["eval", "--run-dir", "runs/r1", "--out-dir", "e1"]);
    run_ok(dir.path(), &["eval", "--run-dir", "runs/r1", "--out-dir", "e2"]);
    let a = std::fs::read(dir.path().join("e1/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("e2/report.json")).unwrap();
    assert_eq!(a, b, "report bytes differ");

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    // The separable corpus is fully learnable at this scale.
    assert_eq!(report["macro_metrics"]["macro_f1"], 1.0);

    let text = std::fs::read_to_string(dir.path().join("e1/report.txt")).unwrap();
    assert!(
        text.contains("b  1.000/1.000/1.000"),
        "class-b row not in P/R/F1 triple format:\n{text}"
    );
}

#[test]
fn training_artifacts_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    write(dir.path(), "config.toml", &small_config("\"baseline\""));
    run_ok(dir.path(), &["train", "--config", "config.toml", "--out-dir", "o1", "--run-name", "r"]);
    run_ok(dir.path(), &["train", "--config", "config.toml", "--out-dir", "o2", "--run-name", "r"]);
    for artifact in ["checkpoint.rtck", "metrics.jsonl", "summary.json", "config.toml"] {
        let a = std::fs::read(dir.path().join("o1/r").join(artifact)).unwrap();
        let b = std::fs::read(dir.path().join("o2/r").join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
}

#[test]
fn run_directories_are_append_only() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    write(dir.path(), "config.toml", &small_config("\"baseline\""));
    run_ok(dir.path(), &["train", "--config", "config.toml", "--run-name", "fixed", "--epochs", "1"]);
    let out = run_in(dir.path(), &["train", "--config", "config.toml", "--run-name", "fixed", "--epochs", "1"]);
    assert!(!out.status.success(), "re-running into an existing run dir must fail");
}

#[test]
fn sweep_emits_four_row_ratio_table() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    let config = small_config("\"pl\"")
        + r#"
[pl]
ratio = 0.08

[[pl.sources]]
id = "depression"
path = "data/depression.jsonl"
assigned = "c"
"#;
    write(dir.path(), "pl.toml", &config);
    run_ok(
        dir.path(),
        &[
            "sweep", "--config", "pl.toml", "--grid", "0.02,0.08,0.16,0.32", "--out-dir",
            "sweep", "--epochs", "1",
        ],
    );
    let table: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sweep/sweep.json")).unwrap(),
    )
    .unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let cells: Vec<&str> = rows.iter().map(|r| r["cell"].as_str().unwrap()).collect();
    assert_eq!(cells, vec!["2%", "8%", "16%", "32%"]);
    for r in rows {
        assert!(r["macro_f1"].as_f64().is_some(), "cell failed: {r}");
    }
}

#[test]
fn sweep_emits_five_row_mix_table() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    let config = small_config("\"pl\"")
        + r#"
[pl]
ratio = 0.08

[[pl.sources]]
id = "depression"
path = "data/depression.jsonl"
assigned = "c"
weight = 1.0

[[pl.sources]]
id = "anxiety"
path = "data/anxiety.jsonl"
assigned = "b"
weight = 2.0
"#;
    write(dir.path(), "mix.toml", &config);
    run_ok(
        dir.path(),
        &[
            "sweep", "--config", "mix.toml", "--mix-grid", "1:5,1:2,1:1,2:1,5:1", "--out-dir",
            "mix", "--epochs", "1",
        ],
    );
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mix/sweep.json")).unwrap())
            .unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn assess_writes_distribution_and_per_user_predictions() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());
    write(dir.path(), "config.toml", &small_config("\"baseline\""));
    run_ok(dir.path(), &["train", "--config", "config.toml", "--run-name", "r1"]);
    run_ok(
        dir.path(),
        &["assess", "--run-dir", "runs/r1", "--corpus", "data/unlabeled.jsonl", "--out-dir", "a1"],
    );

    let preds = std::fs::read_to_string(dir.path().join("a1/predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 30, "one line per input user");

    let assessment: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a1/assessment.json")).unwrap(),
    )
    .unwrap();
    let fractions: Vec<f64> = assessment["distribution"]["fractions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let no_risk = assessment["distribution"]["no_risk"].as_f64().unwrap();
    let any_risk = assessment["distribution"]["any_risk"].as_f64().unwrap();
    assert_eq!(any_risk, 1.0 - no_risk);

    // The stored report re-renders.
    let rendered = run_ok(dir.path(), &["report", "--input", "a1/assessment.json"]);
    assert!(rendered.contains("no-risk"));
}

/// The shipped experiment grid: all eleven configs run to completion on
/// synthetic stand-in corpora (with a reduced epoch budget to keep the
/// suite fast).
#[test]
fn experiment_grid_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    setup_data(dir.path());

    let configs_src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names: Vec<String> = std::fs::read_dir(&configs_src)
        .expect("configs directory ships with the repo")
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 11, "the grid has eleven experiment configs");

    std::fs::create_dir(dir.path().join("configs")).unwrap();
    for name in &names {
        std::fs::copy(configs_src.join(name), dir.path().join("configs").join(name)).unwrap();
    }

    // Exp 2 needs its pre-trained checkpoint in place first.
    run_ok(
        dir.path(),
        &["pretrain", "--config", "configs/exp02_tap.toml", "--out-dir", "runs/tap"],
    );

    for name in &names {
        let run_name = name.trim_end_matches(".toml");
        let stdout = run_ok(
            dir.path(),
            &[
                "train", "--config", &format!("configs/{name}"), "--run-name", run_name,
                "--epochs", "2",
            ],
        );
        assert!(stdout.contains("run_dir:"), "{name} did not finish: {stdout}");
        assert!(
            dir.path().join("runs").join(run_name).join("checkpoint.rtck").exists(),
            "{name} left no checkpoint"
        );
    }
}
