use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn alcode(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alcode"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a small synthetic classification pool and returns its path.
fn class_pool(dir: &Path, train: usize, test: usize) -> PathBuf {
    let params = dir.join("params.json");
    fs::write(
        &params,
        format!(r#"{{"train": {train}, "test": {test}, "vocab_size": 120, "topic_tokens": 8, "signal": 0.35, "num_classes": 4}}"#),
    )
    .unwrap();
    let out = alcode(
        &[
            "synth",
            "--kind",
            "classification",
            "--params",
            "params.json",
            "--seed",
            "3",
            "--out",
            "pool.jsonl",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("pool.jsonl")
}

/// Uniform-ish probability rows, one per item, as CSV.
fn write_proba(dir: &Path, rows: usize, classes: usize) -> PathBuf {
    let mut text = String::new();
    for r in 0..rows {
        let raw: Vec<f64> = (0..classes)
            .map(|c| 1.0 + ((r * 7 + c * 3) % 11) as f64)
            .collect();
        let total: f64 = raw.iter().sum();
        let line: Vec<String> = raw.iter().map(|v| format!("{}", v / total)).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    let path = dir.join("proba.csv");
    fs::write(&path, text).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.to_string_lossy().ends_with(".meta.json") {
                out.push((
                    path.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn margin_with_external_proba_selects_budget() {
    let tmp = TempDir::new().unwrap();
    let pool = class_pool(tmp.path(), 100, 0);
    let pool_before = fs::read(&pool).unwrap();
    write_proba(tmp.path(), 100, 4);
    let out = alcode(
        &[
            "select",
            "--pool",
            "pool.jsonl",
            "--num-classes",
            "4",
            "--method",
            "margin",
            "--budget",
            "10",
            "--proba",
            "proba.csv",
            "--out",
            "sel",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ids: Vec<i64> =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sel/selection.json")).unwrap())
            .unwrap();
    assert_eq!(ids.len(), 10);
    let scores = fs::read_to_string(tmp.path().join("sel/scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("rank,id,score"));
    assert_eq!(scores.lines().count(), 11);
    assert_eq!(
        fs::read(&pool).unwrap(),
        pool_before,
        "input pool must not change"
    );
}

#[test]
fn bald_with_external_model_is_a_capability_error() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 100, 0);
    write_proba(tmp.path(), 100, 4);
    let out = alcode(
        &[
            "select",
            "--pool",
            "pool.jsonl",
            "--method",
            "bald",
            "--budget",
            "10",
            "--proba",
            "proba.csv",
            "--out",
            "sel",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("stochastic"));
}

#[test]
fn coreset_with_trained_model_output_vectors() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 150, 0);
    fs::write(
        tmp.path().join("labeled.json"),
        serde_json::to_string(&(0..30).collect::<Vec<i64>>()).unwrap(),
    )
    .unwrap();
    let args = [
        "select",
        "--pool",
        "pool.jsonl",
        "--method",
        "coreset-c",
        "--feature",
        "output",
        "--budget",
        "12",
        "--labeled",
        "labeled.json",
        "--seed",
        "4",
        "--out",
    ];
    let first = alcode(&[&args[..], &["a"]].concat(), tmp.path());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = alcode(&[&args[..], &["b"]].concat(), tmp.path());
    assert_eq!(code(&second), 0);
    let a = fs::read_to_string(tmp.path().join("a/selection.json")).unwrap();
    assert_eq!(
        a,
        fs::read_to_string(tmp.path().join("b/selection.json")).unwrap()
    );
    let ids: Vec<i64> = serde_json::from_str(&a).unwrap();
    assert_eq!(ids.len(), 12);
    assert!(
        ids.iter().all(|&i| i >= 30),
        "labeled items must not be reselected"
    );
}

#[test]
fn model_methods_without_a_model_exit_3() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 60, 0);
    let out = alcode(
        &[
            "select",
            "--pool",
            "pool.jsonl",
            "--method",
            "entropy",
            "--budget",
            "5",
            "--out",
            "sel",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_flags_and_missing_files() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 60, 0);
    let out = alcode(
        &[
            "select",
            "--pool",
            "pool.jsonl",
            "--method",
            "magic",
            "--budget",
            "5",
            "--out",
            "sel",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    let out = alcode(
        &[
            "select",
            "--pool",
            "missing.jsonl",
            "--method",
            "random",
            "--budget",
            "5",
            "--out",
            "sel",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = alcode(
        &[
            "select",
            "--pool",
            "pool.jsonl",
            "--method",
            "random",
            "--budget",
            "0",
            "--out",
            "sel",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn pairwise_contracts() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 150, 30);
    let out = alcode(
        &[
            "pairwise",
            "--pool",
            "pool.jsonl",
            "--metric",
            "euclidean",
            "--out",
            "m.alfv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("feature"));

    for w in ["1", "8"] {
        let out = alcode(
            &[
                "pairwise",
                "--pool",
                "pool.jsonl",
                "--metric",
                "bleu",
                "--subsample",
                "100",
                "--seed",
                "5",
                "--workers",
                w,
                "--out",
                &format!("w{w}.alfv"),
            ],
            tmp.path(),
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let one = fs::read(tmp.path().join("w1.alfv")).unwrap();
    assert_eq!(one, fs::read(tmp.path().join("w8.alfv")).unwrap());
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("w1.json")).unwrap()).unwrap();
    assert_eq!(sidecar["n"], 100);
    assert_eq!(sidecar["ids"].as_array().unwrap().len(), 100);
    let matrix = alcode::matrix_io::load_matrix(tmp.path().join("w1.alfv")).unwrap();
    assert_eq!(matrix.dim(), (100, 100));

    let feats = tmp.path().join("feats.csv");
    let rows: Vec<String> = (0..180).map(|i| format!("{},{}", i % 7, i % 5)).collect();
    fs::write(&feats, rows.join("\n")).unwrap();
    let out = alcode(
        &[
            "pairwise",
            "--pool",
            "pool.jsonl",
            "--metric",
            "cosine",
            "--features",
            "feats.csv",
            "--out",
            "c.alfv",
        ],
        tmp.path(),
    );
    assert_eq!(
        code(&out),
        2,
        "zero rows make cosine undefined: {}",
        stderr(&out)
    );
    let rows: Vec<String> = (0..180)
        .map(|i| format!("{},{}", 1 + i % 7, i % 5))
        .collect();
    fs::write(&feats, rows.join("\n")).unwrap();
    let out = alcode(
        &[
            "pairwise",
            "--pool",
            "pool.jsonl",
            "--metric",
            "cosine",
            "--features",
            "feats.csv",
            "--out",
            "c.alfv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn experiment(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("experiment.json");
    fs::write(
        &path,
        format!(
            r#"{{
  "pool": {{"path": "pool.jsonl", "num_classes": 4}},
  "model": {{"kind": "classifier", "hidden_width": 16, "epochs": 2}},
  "acquisition": [{{"method": "random"}}, {{"method": "margin"}}, {{"method": "coreset", "feature": "token"}}],
  "budgets": {{"init_size": 20, "round_fraction": 0.05, "rounds": 2}},
  "seeds": [1, 2, 3, 4, 5],
  "output_dir": "out"{extra}
}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_every_run_and_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 200, 60);
    experiment(tmp.path(), "");
    let out = alcode(&["simulate", "experiment.json"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let runs = tmp.path().join("out/runs");
    let logs: Vec<_> = fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && !n.ends_with(".meta.json"))
        .collect();
    assert_eq!(logs.len(), 15, "{logs:?}");
    assert!(runs.join("coreset_token_euclidean_seed3.csv").exists());
    let log = alcode::simulator::RunLog::from_json(
        &fs::read_to_string(runs.join("margin_seed1.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(log.labeled_counts(), vec![20, 30, 40]);

    let table = fs::read_to_string(tmp.path().join("out/comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let svg = fs::read_to_string(tmp.path().join("out/curves.svg")).unwrap();
    assert!(
        svg.starts_with("<svg") && svg.contains("margin") && svg.trim_end().ends_with("</svg>")
    );

    let before = dir_bytes(&tmp.path().join("out"));
    let again = alcode(&["simulate", "experiment.json"], tmp.path());
    assert_eq!(code(&again), 0);
    assert_eq!(before, dir_bytes(&tmp.path().join("out")));
}

#[test]
fn simulate_worker_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 120, 40);
    let write = |workers: usize, out: &str| {
        fs::write(
            tmp.path().join("exp.json"),
            format!(
                r#"{{"pool": {{"path": "pool.jsonl"}}, "model": {{"kind": "classifier", "hidden_width": 8, "epochs": 2}},
                   "acquisition": [{{"method": "badge"}}, {{"method": "cal"}}],
                   "budgets": {{"init_size": 20, "round_fraction": 0.1, "rounds": 2}},
                   "seeds": [7], "workers": {workers}, "plot": false, "output_dir": "{out}"}}"#
            ),
        )
        .unwrap();
        let run = alcode(&["simulate", "exp.json"], tmp.path());
        assert_eq!(code(&run), 0, "{}", stderr(&run));
    };
    write(1, "one");
    write(8, "eight");
    assert_eq!(
        dir_bytes(&tmp.path().join("one")),
        dir_bytes(&tmp.path().join("eight"))
    );
    assert!(!tmp.path().join("one/curves.svg").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 100, 20);
    experiment(tmp.path(), r#", "surprise": true"#);
    let out = alcode(&["simulate", "experiment.json"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("surprise"));

    fs::write(
        tmp.path().join("dup.json"),
        r#"{"pool": {"path": "pool.jsonl"}, "acquisition": [{"method": "margin"}, {"method": "margin"}], "output_dir": "o"}"#,
    )
    .unwrap();
    assert_eq!(code(&alcode(&["simulate", "dup.json"], tmp.path())), 2);

    fs::write(
        tmp.path().join("big.json"),
        r#"{"pool": {"path": "pool.jsonl"}, "budgets": {"init_size": 5000}, "output_dir": "o"}"#,
    )
    .unwrap();
    assert_eq!(code(&alcode(&["simulate", "big.json"], tmp.path())), 2);
}

#[test]
fn study_reports_and_names_unknown_distances() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 200, 60);
    let write = |methods: &str| {
        fs::write(
            tmp.path().join("study.json"),
            format!(
                r#"{{"pool": {{"path": "pool.jsonl"}}, "model": {{"kind": "classifier", "hidden_width": 8, "epochs": 2}},
                   "budgets": {{"init_size": 20, "round_fraction": 0.05}},
                   "study": {{"repeats": 10, "distance_methods": {methods}, "feature": "token"}},
                   "output_dir": "out"}}"#
            ),
        )
        .unwrap();
    };
    write(r#"["euclidean", "cosine", "bleu", "telepathy"]"#);
    let out = alcode(&["study", "study.json"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("telepathy"), "{}", stderr(&out));

    write(r#"["euclidean", "cosine", "bleu", "greedy_match"]"#);
    let out = alcode(&["study", "study.json"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/study/seed0.json")).unwrap())
            .unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
    assert_eq!(report["pairwise"].as_array().unwrap().len(), 6);
    let csv = fs::read_to_string(tmp.path().join("out/study/seed0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 6);
}

#[test]
fn study_section_is_required() {
    let tmp = TempDir::new().unwrap();
    class_pool(tmp.path(), 60, 20);
    fs::write(
        tmp.path().join("s.json"),
        r#"{"pool": {"path": "pool.jsonl"}, "output_dir": "o"}"#,
    )
    .unwrap();
    assert_eq!(code(&alcode(&["study", "s.json"], tmp.path())), 2);
}

#[test]
fn synth_sequence_pool_round_trips() {
    let tmp = TempDir::new().unwrap();
    let out = alcode(
        &[
            "synth",
            "--kind",
            "sequence",
            "--seed",
            "2",
            "--out",
            "seq/pool.jsonl",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pool = alcode::load_pool(
        tmp.path().join("seq/pool.jsonl"),
        &alcode::PoolSchema::default(),
    )
    .unwrap();
    assert_eq!(pool.task_kind(), alcode::TaskKind::SequenceGeneration);
    assert_eq!(pool.train_indices().len(), 500);
}
