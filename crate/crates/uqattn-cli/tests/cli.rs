//! Black-box tests of the `uqattn` binary: exit-code discipline, file
//! formats, reproducibility of reruns, and cross-command workflows.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqattn"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn write_task_spec(path: &Path) {
    let text = r#"{
        "vocab_size": 40, "seq_len": 12, "num_classes": 3,
        "ambiguity_fraction": 0.5,
        "shift_profile": { "AliasRemap": { "fraction": 0.5 } },
        "label_rule": "majority_vote", "seed": 7,
        "train_size": 100, "val_size": 30, "test_size": 30
    }"#;
    fs::write(path, text).unwrap();
}

fn write_small_encoder_config(path: &Path) {
    let text = r#"{
        "vocab_size": 40, "max_seq_len": 12, "num_layers": 2, "num_heads": 2,
        "model_dim": 16, "head_dim": 8, "ff_dim": 32, "num_classes": 3,
        "dropout_embedding": 0.1, "dropout_attention": 0.2, "dropout_ffn": 0.3,
        "lambda": 0.5, "mc_samples": 5
    }"#;
    fs::write(path, text).unwrap();
}

fn write_fast_train_config(path: &Path) {
    let text = r#"{
        "epochs": 2, "batch_size": 32, "learning_rate": 0.001, "clip_norm": 5.0,
        "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8
    }"#;
    fs::write(path, text).unwrap();
}

/// Generates a dataset and trains a small checkpoint inside `root`,
/// returning (data dir, checkpoint path).
fn prepare_model(root: &Path) -> (PathBuf, PathBuf) {
    let spec = root.join("task.json");
    write_task_spec(&spec);
    let data = root.join("data");
    assert_ok(&run(&["generate", "--config", path_str(&spec), "--out", path_str(&data)]));

    let encoder = root.join("encoder.json");
    write_small_encoder_config(&encoder);
    let traincfg = root.join("train.json");
    write_fast_train_config(&traincfg);
    let model = root.join("model");
    assert_ok(&run(&[
        "train",
        "--data",
        path_str(&data),
        "--encoder-config",
        path_str(&encoder),
        "--train-config",
        path_str(&traincfg),
        "--seed",
        "3",
        "--out",
        path_str(&model),
    ]));
    (data, model.join("checkpoint.json"))
}

/// Sorted (relative path, contents) pairs for every file under `dir`,
/// skipping the excluded file names.
fn dir_snapshot(dir: &Path, exclude: &[&str]) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, exclude: &[&str], out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            if path.is_dir() {
                walk(base, &path, exclude, out);
            } else if !exclude.contains(&name.as_str()) {
                let rel = path.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, exclude, &mut out);
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path, exclude: &[&str]) {
    let snap_a = dir_snapshot(a, exclude);
    let snap_b = dir_snapshot(b, exclude);
    let names_a: Vec<&String> = snap_a.iter().map(|(n, _)| n).collect();
    let names_b: Vec<&String> = snap_b.iter().map(|(n, _)| n).collect();
    assert_eq!(names_a, names_b, "file sets differ");
    for ((name, bytes_a), (_, bytes_b)) in snap_a.iter().zip(&snap_b) {
        assert_eq!(bytes_a, bytes_b, "{name} differs between the two runs");
    }
}

/// One fabricated binary-classification dump record with the given
/// confidence; logits are the log-probabilities so temperature fitting
/// sees a consistent record.
fn dump_line(id: u64, label: usize, confidence: f64) -> String {
    let c = confidence;
    let rest = 1.0 - c;
    format!(
        "{{\"example_id\":{id},\"label\":{label},\"mean_probs\":[{c},{rest}],\
         \"mean_logits\":[{},{}],\"predicted_class\":0,\"confidence\":{c},\
         \"predictive_variance\":0.0,\"token_uncertainty\":[0.0]}}",
        c.ln(),
        rest.ln()
    )
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = run(&["generate", "--out", "/tmp/never-used"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn nonexistent_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "metrics",
        "--predictions",
        "/nonexistent/predictions.jsonl",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(exit_code(&out), 3, "stderr: {}", stderr_text(&out));
}

#[test]
fn malformed_prediction_line_is_a_parse_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("predictions.jsonl");
    let good = dump_line(0, 0, 0.9);
    fs::write(&dump, format!("{good}\n{{\"example_id\": 1,\n")).unwrap();
    let out = run(&[
        "metrics",
        "--predictions",
        path_str(&dump),
        "--out",
        path_str(&dir.path().join("m")),
    ]);
    assert_eq!(exit_code(&out), 4, "stderr: {}", stderr_text(&out));
    assert!(
        stderr_text(&out).contains("line 2"),
        "stderr should name line 2: {}",
        stderr_text(&out)
    );
}

#[test]
fn infeasible_task_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("task.json");
    // 3 classes need a vocabulary of at least 10; 5 is infeasible.
    fs::write(
        &spec,
        r#"{
            "vocab_size": 5, "seq_len": 12, "num_classes": 3,
            "ambiguity_fraction": 0.5, "shift_profile": "Identity",
            "label_rule": "majority_vote", "seed": 1,
            "train_size": 10, "val_size": 5, "test_size": 5
        }"#,
    )
    .unwrap();
    let out = run(&[
        "generate",
        "--config",
        path_str(&spec),
        "--out",
        path_str(&dir.path().join("d")),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_text(&out));
}

// ---------------------------------------------------------------------------
// Reproducibility
// ---------------------------------------------------------------------------

#[test]
fn generate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("task.json");
    write_task_spec(&spec);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_ok(&run(&["generate", "--config", path_str(&spec), "--out", path_str(&a)]));
    assert_ok(&run(&["generate", "--config", path_str(&spec), "--out", path_str(&b)]));
    // Only the manifest carries a timestamp; every data file is a pure
    // function of the spec.
    assert_same_tree(&a, &b, &["manifest.json"]);
}

#[test]
fn modulation_at_zero_matches_plain_mc_dumps_bytewise() {
    let dir = tempfile::tempdir().unwrap();
    let (data, checkpoint) = prepare_model(dir.path());
    let split = data.join("val.jsonl");
    let uat = dir.path().join("uat");
    let mc = dir.path().join("mc");
    assert_ok(&run(&[
        "infer",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&split),
        "--out",
        path_str(&uat),
        "--mode",
        "uat",
        "--lambda",
        "0",
        "--mc-samples",
        "4",
        "--seed",
        "11",
    ]));
    assert_ok(&run(&[
        "infer",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&split),
        "--out",
        path_str(&mc),
        "--mode",
        "mc",
        "--mc-samples",
        "4",
        "--seed",
        "11",
    ]));
    let uat_bytes = fs::read(uat.join("predictions.jsonl")).unwrap();
    let mc_bytes = fs::read(mc.join("predictions.jsonl")).unwrap();
    assert_eq!(uat_bytes, mc_bytes);
}

#[test]
fn baseline_mode_warns_about_ignored_sampling_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (data, checkpoint) = prepare_model(dir.path());
    let split = data.join("val.jsonl");
    let plain = dir.path().join("plain");
    let flagged = dir.path().join("flagged");
    assert_ok(&run(&[
        "infer",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&split),
        "--out",
        path_str(&plain),
        "--mode",
        "baseline",
    ]));
    let out = run(&[
        "infer",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&split),
        "--out",
        path_str(&flagged),
        "--mode",
        "baseline",
        "--mc-samples",
        "9",
    ]);
    assert_ok(&out);
    assert!(
        stderr_text(&out).contains("--mc-samples is ignored"),
        "stderr: {}",
        stderr_text(&out)
    );
    // The flag changed nothing.
    assert_eq!(
        fs::read(plain.join("predictions.jsonl")).unwrap(),
        fs::read(flagged.join("predictions.jsonl")).unwrap()
    );
}

// ---------------------------------------------------------------------------
// Metrics against hand-computed values
// ---------------------------------------------------------------------------

#[test]
fn metrics_reproduces_hand_computed_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("predictions.jsonl");
    let lines = [
        dump_line(0, 0, 0.6),
        dump_line(1, 1, 0.7), // predicted 0, true label 1: the one miss
        dump_line(2, 0, 0.9),
        dump_line(3, 0, 0.95),
    ];
    fs::write(&dump, lines.join("\n") + "\n").unwrap();

    let fine = dir.path().join("fine");
    assert_ok(&run(&[
        "metrics",
        "--predictions",
        path_str(&dump),
        "--out",
        path_str(&fine),
        "--bins",
        "4",
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fine.join("calibration.json")).unwrap()).unwrap();
    let ece = report["ece"].as_f64().unwrap();
    assert!((ece - 0.1125).abs() < 1e-12, "ece = {ece}");
    assert_eq!(report["num_bins"], 4);
    assert_eq!(report["accuracy_overall"], 0.75);
    assert!(report.get("temperature").is_none());

    // With two bins all four records share the upper bin: |0.75 - 0.7875|.
    let coarse = dir.path().join("coarse");
    assert_ok(&run(&[
        "metrics",
        "--predictions",
        path_str(&dump),
        "--out",
        path_str(&coarse),
        "--bins",
        "2",
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(coarse.join("calibration.json")).unwrap())
            .unwrap();
    let ece = report["ece"].as_f64().unwrap();
    assert!((ece - 0.0375).abs() < 1e-12, "ece = {ece}");

    // The default bin count is echoed back.
    let default = dir.path().join("default");
    assert_ok(&run(&[
        "metrics",
        "--predictions",
        path_str(&dump),
        "--out",
        path_str(&default),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(default.join("calibration.json")).unwrap())
            .unwrap();
    assert_eq!(report["num_bins"], 15);
}

// ---------------------------------------------------------------------------
// Full workflows
// ---------------------------------------------------------------------------

#[test]
fn end_to_end_chain_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (data, checkpoint) = prepare_model(dir.path());

    let preds = |split: &str, out: &str| {
        let out_dir = dir.path().join(out);
        assert_ok(&run(&[
            "infer",
            "--checkpoint",
            path_str(&checkpoint),
            "--data",
            path_str(&data.join(split)),
            "--out",
            path_str(&out_dir),
            "--mode",
            "uat",
            "--mc-samples",
            "4",
            "--seed",
            "5",
        ]));
        out_dir.join("predictions.jsonl")
    };
    let val = preds("val.jsonl", "pred_val");
    let test_id = preds("test_id.jsonl", "pred_id");
    let test_ood = preds("test_ood.jsonl", "pred_ood");

    let vardec = dir.path().join("vardec");
    assert_ok(&run(&[
        "decompose",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&data.join("val.jsonl")),
        "--index",
        "1",
        "--outer",
        "2",
        "--inner",
        "4",
        "--out",
        path_str(&vardec),
    ]));
    let variance_csv = fs::read_to_string(vardec.join("variance.csv")).unwrap();
    assert!(variance_csv.starts_with("layer_index,component_label,variance,normalized\n"));
    assert!(variance_csv.trim_end().ends_with("output,0,0"));

    let metrics = dir.path().join("metrics");
    assert_ok(&run(&[
        "metrics",
        "--predictions",
        path_str(&test_id),
        "--ood",
        path_str(&test_ood),
        "--fit-temperature",
        path_str(&val),
        "--out",
        path_str(&metrics),
    ]));
    for name in [
        "calibration.json",
        "bins.csv",
        "curve.csv",
        "curve_summary.json",
        "ood_calibration.json",
        "shift.json",
        "manifest.json",
    ] {
        assert!(metrics.join(name).exists(), "{name} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(metrics.join("calibration.json")).unwrap())
            .unwrap();
    let t = report["temperature"].as_f64().expect("fitted temperature");
    assert!(t > 0.0);
    let shift: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(metrics.join("shift.json")).unwrap()).unwrap();
    assert!(shift["delta_ece"].is_number());
    assert!(shift["robustness"].is_number());

    let eff = dir.path().join("eff");
    assert_ok(&run(&[
        "bench-efficiency",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&data.join("val.jsonl")),
        "--out",
        path_str(&eff),
        "--samples-grid",
        "2,4",
        "--warmup",
        "1",
        "--timed",
        "3",
    ]));
    let csv = fs::read_to_string(eff.join("efficiency.csv")).unwrap();
    let rows: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",2,"), "first grid point runs 2 passes: {}", rows[1]);
    assert!(rows[2].contains(",4,"), "second grid point runs 4 passes: {}", rows[2]);
}

#[test]
fn experiment_rerun_from_echo_is_thread_invariant_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("experiment.json");
    fs::write(
        &manifest,
        r#"{
            "task": {
                "vocab_size": 40, "seq_len": 12, "num_classes": 3,
                "ambiguity_fraction": 0.5,
                "shift_profile": { "AliasRemap": { "fraction": 0.5 } },
                "label_rule": "majority_vote", "seed": 7,
                "train_size": 80, "val_size": 24, "test_size": 24
            },
            "encoder": {
                "vocab_size": 40, "max_seq_len": 12, "num_layers": 2, "num_heads": 2,
                "model_dim": 16, "head_dim": 8, "ff_dim": 32, "num_classes": 3,
                "dropout_embedding": 0.1, "dropout_attention": 0.2, "dropout_ffn": 0.3,
                "lambda": 0.5, "mc_samples": 5
            },
            "train": {
                "epochs": 1, "batch_size": 32, "learning_rate": 0.001, "clip_norm": 5.0,
                "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8
            },
            "train_seed": 3,
            "roster": [
                "BaselineDeterministic",
                { "UatLite": { "lambda": 0.5, "samples": 2, "emb": 0.1, "att": 0.2, "ffn": 0.3 } },
                { "TempScaling": { "base": { "UatLite": { "lambda": 0.5, "samples": 2, "emb": 0.1, "att": 0.2, "ffn": 0.3 } } } }
            ],
            "seeds": [0, 1]
        }"#,
    )
    .unwrap();

    let first = dir.path().join("first");
    assert_ok(&run(&[
        "experiment",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&first),
        "--threads",
        "1",
    ]));
    for name in ["per_seed.csv", "aggregate.csv", "timing.csv"] {
        assert!(first.join("tables").join(name).exists(), "{name} missing");
    }
    let per_seed = fs::read_to_string(first.join("tables/per_seed.csv")).unwrap();
    assert_eq!(per_seed.trim_end().lines().count(), 1 + 3 * 2, "3 methods x 2 seeds");
    // The temperature-scaled arm records its fitted temperature.
    let scaled_row = per_seed
        .lines()
        .find(|l| l.starts_with("temp_scaling_"))
        .expect("temp scaling row");
    let temperature = scaled_row.rsplit(',').next().unwrap();
    assert!(temperature.parse::<f64>().is_ok(), "row: {scaled_row}");

    // Replaying the resolved echo with a different worker count changes
    // no output byte outside the timestamped manifest and wall times.
    let echo = first.join("experiment_manifest.json");
    let second = dir.path().join("second");
    assert_ok(&run(&[
        "experiment",
        "--manifest",
        path_str(&echo),
        "--out",
        path_str(&second),
        "--threads",
        "3",
    ]));
    assert_same_tree(&first, &second, &["manifest.json", "timing.csv"]);

    // Rerunning in place resumes from the existing reports and leaves the
    // tables unchanged.
    let before = fs::read(first.join("tables/per_seed.csv")).unwrap();
    assert_ok(&run(&[
        "experiment",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&first),
        "--threads",
        "2",
    ]));
    assert_eq!(before, fs::read(first.join("tables/per_seed.csv")).unwrap());
}
