use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snv_cli::config::ExperimentConfig;
use snv_cli::hpo::{self, Grid};
use snv_core::continual::{run_sequence, til_accuracy};
use snv_core::metrics::AccuracyMatrix;

const MINIMAL: &str = r#"
version = 1
seed = 3
scenario = "til"
output_dir = "unused"

[stream]
n_tasks = 2
classes_per_task = 2
input_dim = 4
samples_per_class = 30
blob_spread = 0.5
class_separation = 4.0

[network]
hidden = [8]

[trainer]
learning_rate = 0.1
epochs = 20
batch_size = 8

[estimator]
capacity_ratio = 0.25
truncation_threshold = 0.05
confidence = 0.95
max_permutations = 300
"#;

/// Harder blobs with early stopping, used for the learning-rate search.
const STANDARD: &str = r#"
version = 1
seed = 0
scenario = "til"
output_dir = "unused"

[stream]
n_tasks = 2
classes_per_task = 2
input_dim = 8
samples_per_class = 100
blob_spread = 1.0
class_separation = 3.0

[network]
hidden = [32]

[trainer]
learning_rate = 0.1
epochs = 50
batch_size = 16

[estimator]
capacity_ratio = 0.1
truncation_threshold = 0.05
confidence = 0.95
max_permutations = 2000
"#;

fn snv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_ok(config: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = snv(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn minimal_run_writes_the_artifact_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let out = tmp.path().join("run");
    let line = run_ok(&cfg, &out, &[]);
    assert!(line.starts_with("ACC "), "{line}");
    assert!(line.contains("BWT") && line.contains("CAP"));

    let r = AccuracyMatrix::from_csv(&read(out.join("R.csv"))).unwrap();
    assert_eq!(r.n_tasks(), 2);
    assert!(r.get(0, 0).is_some() && r.get(1, 0).is_some() && r.get(1, 1).is_some());
    assert!(read(out.join("R.csv")).lines().nth(1).unwrap().ends_with(','));
    for f in [
        "config.echo.json",
        "masks.csv",
        "phi_task_1.csv",
        "phi_task_2.csv",
        "estimate_task_1.json",
        "snapshots/task_1.json",
        "snapshots/task_2.json",
        "model.json",
        "summary.json",
        "meta.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join("R_til.csv").exists());
}

#[test]
fn both_scenarios_write_two_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("\"til\"", "\"both\""));
    let out = tmp.path().join("run");
    run_ok(&cfg, &out, &[]);
    assert!(out.join("R_til.csv").is_file());
    assert!(out.join("R_cil.csv").is_file());
    assert!(!out.join("R.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&read(out.join("summary.json"))).unwrap();
    assert!(summary["scenarios"]["til"]["acc"].is_number());
    assert!(summary["scenarios"]["cil"]["acc"].is_number());
}

#[test]
fn repeated_runs_are_identical_and_seed_override_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_ok(&cfg, &a, &[]);
    run_ok(&cfg, &b, &[]);
    run_ok(&cfg, &c, &["--seed", "99"]);
    for f in ["summary.json", "R.csv", "masks.csv", "model.json", "phi_task_2.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_ne!(read(a.join("model.json")), read(c.join("model.json")));
    let echo = ExperimentConfig::from_json(&read(c.join("config.echo.json"))).unwrap();
    assert_eq!(echo.seed, 99);
    assert_eq!(echo.output_dir, c);
}

#[test]
fn echo_parses_back_to_the_same_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let out = tmp.path().join("run");
    run_ok(&cfg, &out, &[]);
    let mut loaded = ExperimentConfig::load(&cfg).unwrap();
    loaded.output_dir = out.clone();
    let echo = ExperimentConfig::from_json(&read(out.join("config.echo.json"))).unwrap();
    assert_eq!(echo, loaded);
    let reloaded = ExperimentConfig::load(&out.join("config.echo.json")).unwrap();
    assert_eq!(reloaded, loaded);
}

#[test]
fn config_errors_exit_with_two_and_point_at_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("[network]", "[network]\nwidth = 3"));
    let o = snv(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("width") && err.contains("line"), "{err}");

    let cfg = write_config(tmp.path(), "v.toml", &MINIMAL.replace("version = 1", "version = 9"));
    assert_eq!(snv(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "k.toml", &MINIMAL.replace("capacity_ratio = 0.25", "capacity_ratio = 0.05"));
    assert_eq!(snv(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(snv(&["run", "--config", "/nonexistent/c.toml"]).status.code(), Some(3));
}

#[test]
fn exact_prints_oracle_values_and_refuses_large_games() {
    let tmp = tempfile::tempdir().unwrap();
    let glove = write_config(tmp.path(), "glove.txt", "0 0\n1 0\n2 0\n3 1\n4 0\n5 1\n6 0\n7 1\n");
    let o = snv(&["exact", "--game", glove.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("0\t0.6667\n1\t0.1667\n2\t0.1667\n"), "{text}");

    let additive: String = (0..32u32).map(|m| format!("{m:x} {}\n", m.count_ones())).collect();
    let add = write_config(tmp.path(), "add.txt", &additive);
    let text = String::from_utf8(snv(&["exact", "--game", add.to_str().unwrap()]).stdout).unwrap();
    assert_eq!(text.matches("\t1.0000\n").count(), 5);

    let o = snv(&["exact", "--game", glove.to_str().unwrap(), "--compare", "--seed", "2"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("ci_half_width") && text.contains("permutations 20000"), "{text}");

    let big = write_config(tmp.path(), "big.txt", "0 0\n100000 1\n");
    assert_eq!(snv(&["exact", "--game", big.to_str().unwrap()]).status.code(), Some(4));
    let bad = write_config(tmp.path(), "bad.txt", "0 0\n1 x\n");
    assert_eq!(snv(&["exact", "--game", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn analyze_reports_are_consistent_with_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let out = tmp.path().join("run");
    run_ok(&cfg, &out, &[]);
    let o = snv(&["analyze", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let overlap = read(out.join("overlap.csv"));
    let rows: Vec<Vec<&str>> = overlap.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[i + 1], "1.0");
    }
    let heat = read(out.join("shapley_heatmap.csv"));
    let lines: Vec<&str> = heat.lines().collect();
    assert_eq!(lines.len(), 1 + 2);
    assert!(lines.iter().all(|l| l.split(',').count() == 1 + 8));
    assert!(lines[0].starts_with("task,l0_u0,"));

    let curve = read(out.join("pruning_curve.csv"));
    let first: Vec<&str> = curve.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0.0");
    let summary: serde_json::Value = serde_json::from_str(&read(out.join("summary.json"))).unwrap();
    assert_eq!(first[1].parse::<f64>().unwrap(), summary["final_cil_accuracy"].as_f64().unwrap());
    assert_eq!(curve.lines().count(), 1 + 11);

    std::fs::remove_file(out.join("phi_task_2.csv")).unwrap();
    let o = snv(&["analyze", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("phi_task_2.csv"));
}

#[test]
fn generated_stream_can_be_fed_back() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let stream = tmp.path().join("stream");
    let o = snv(&["gen-stream", "--config", cfg.to_str().unwrap(), "--output", stream.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stream.join("t2_val.csv").is_file());

    let start = MINIMAL.find("[stream]").unwrap();
    let end = MINIMAL.find("[network]").unwrap();
    let from_dir = format!(
        "{}stream_dir = {:?}\n\n{}",
        &MINIMAL[..start],
        stream.to_str().unwrap(),
        &MINIMAL[end..]
    );
    let cfg2 = write_config(tmp.path(), "d.toml", &from_dir);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&cfg, &a, &[]);
    run_ok(&cfg2, &b, &[]);
    for f in ["R.csv", "masks.csv", "model.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
}

#[test]
fn hpo_singleton_matches_a_plain_first_task_run() {
    let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    let grid = Grid {
        learning_rate: Some(vec![0.1]),
        ..Grid::default()
    };
    let (trace, best) = hpo::execute(&cfg, &grid).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(best.index, 0);

    let tasks = snv_cli::run::load_stream(&cfg).unwrap();
    let net = snv_cli::run::initial_net(&cfg, &tasks).unwrap();
    let out = run_sequence(net, &tasks[..1], &cfg.sequence_config()).unwrap();
    let plain = til_accuracy(&out.net, &out.snapshots, 1, &tasks[0].val, out.til_mode()).unwrap();
    assert_eq!(best.val_accuracy, plain);
    assert_eq!(best.config, cfg);
}

#[test]
fn hpo_trace_has_one_row_per_grid_point() {
    let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    let grid = Grid {
        learning_rate: Some(vec![0.05, 0.1]),
        capacity_ratio: Some(vec![0.25, 0.5]),
        truncation_threshold: Some(vec![f64::NEG_INFINITY, 0.05]),
        confidence: None,
    };
    let (trace, best) = hpo::execute(&cfg, &grid).unwrap();
    assert_eq!(trace.len(), 8);
    assert!(trace.iter().all(|r| r.val_accuracy <= best.val_accuracy));
    assert_eq!(hpo::trace_csv(&trace).lines().count(), 9);
    assert_eq!(trace[0].candidate.truncation_threshold, None);
}

#[test]
fn hpo_rejects_the_divergent_learning_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", STANDARD);
    let grid = write_config(tmp.path(), "g.toml", "learning_rate = [10.0, 0.001]\n");
    let out = tmp.path().join("hpo");
    let o = snv(&[
        "hpo",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let best: serde_json::Value = serde_json::from_str(&read(out.join("hpo_best.json"))).unwrap();
    assert_eq!(best["candidate"]["learning_rate"].as_f64(), Some(0.001));
    assert_eq!(read(out.join("hpo_trace.csv")).lines().count(), 3);
    let derived = ExperimentConfig::load(&out.join("hpo_best.toml")).unwrap();
    assert_eq!(derived.trainer.learning_rate, 0.001);

    let empty = write_config(tmp.path(), "e.toml", "learning_rate = []\n");
    let o = snv(&["hpo", "--config", cfg.to_str().unwrap(), "--grid", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty grid"));
}
