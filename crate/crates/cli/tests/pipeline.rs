mod support;

use std::path::Path;

use support::{p, pipeline, run, run_ok, SMALL_CONFIG};

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn error_line(out: &std::process::Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let last = stderr.lines().last().expect("an error line on stderr");
    serde_json::from_str(last).expect("error line is JSON")
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let r = pipeline(dir.path(), &cfg);
    for split in ["train", "valid", "test"] {
        assert!(r.corpus.join(format!("{split}.tsv")).exists(), "{split} manifest");
    }
    for d in [&r.corpus, &r.pretrain, &r.select, &r.joint] {
        assert!(d.join("config.toml").exists());
        assert!(!d.join(".lock").exists(), "lock released");
    }
    assert!(r.pretrain.join("metrics.jsonl").exists());
    assert!(r.pretrain.join("step000003.mbck").exists());
    let selection = std::fs::read_to_string(r.select.join("selection.jsonl")).unwrap();
    assert_eq!(selection.lines().count(), 3, "one record per layer 0..=2");
    let layers: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(r.joint.join("layers.json")).unwrap()).unwrap();
    assert_eq!(layers["source"], "selection");
    assert_eq!(layers["layers"], serde_json::json!([0, 1, 2]), "threshold 0 keeps every layer");
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(r.eval.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["samples"], 6);
    assert_eq!(std::fs::read_to_string(r.eval.join("generations.jsonl")).unwrap().lines().count(), 6);
    let score: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(r.score.join("align_score.json")).unwrap()).unwrap();
    assert_eq!(score["per_layer"].as_object().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(r.project.join("projection.tsv")).unwrap().lines().count(), 12);
}

#[test]
fn explicit_layer_ranges_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let corpus = dir.path().join("corpus");
    let pre = dir.path().join("pre");
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&corpus)]);
    run_ok(&["pretrain", "--config", p(&cfg), "--corpus", p(&corpus), "--out", p(&pre)]);
    let ckpt = pre.join("final.mbck");
    for (spec, expected) in [("0..2", serde_json::json!([0, 1])), ("none", serde_json::json!([]))] {
        let out = dir.path().join(format!("joint-{spec}"));
        let summary = run_ok(&[
            "train-joint",
            "--config",
            p(&cfg),
            "--checkpoint",
            p(&ckpt),
            "--corpus",
            p(&corpus),
            "--layers",
            spec,
            "--out",
            p(&out),
        ]);
        assert_eq!(summary["layers"], expected);
    }
    // Layer 3 does not exist in a two-layer model.
    let out = run(&[
        "train-joint",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ckpt),
        "--corpus",
        p(&corpus),
        "--layers",
        "3",
        "--out",
        p(&dir.path().join("bad")),
    ]);
    assert_eq!(error_line(&out)["error"], "layer_out_of_range");
}

#[test]
fn unknown_config_keys_fail_with_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sed = 3\n");
    let out = run(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("c"))]);
    let err = error_line(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("sed"));
}

#[test]
fn locked_run_directories_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("corpus");
    std::fs::create_dir_all(&out_dir).unwrap();
    std::fs::write(out_dir.join(".lock"), "").unwrap();
    let out = run(&["synth", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(error_line(&out)["error"], "locked");
    assert!(!out_dir.join("train.tsv").exists());
}

#[test]
fn auto_layers_without_a_selection_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train-joint",
        "--checkpoint",
        "missing.mbck",
        "--corpus",
        "missing",
        "--out",
        p(&dir.path().join("j")),
    ]);
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn mismatched_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let corpus = dir.path().join("corpus");
    let pre = dir.path().join("pre");
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&corpus)]);
    run_ok(&["pretrain", "--config", p(&cfg), "--corpus", p(&corpus), "--out", p(&pre)]);
    let wider = SMALL_CONFIG.replace("model_dim = 8", "model_dim = 12");
    let other = dir.path().join("other.toml");
    std::fs::write(&other, wider).unwrap();
    let out = run(&[
        "eval",
        "--config",
        p(&other),
        "--checkpoint",
        p(&pre.join("final.mbck")),
        "--corpus",
        p(&corpus),
        "--out",
        p(&dir.path().join("e")),
    ]);
    assert_eq!(error_line(&out)["error"], "format");
}

#[test]
fn missing_corpus_reports_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONFIG);
    let out = run(&[
        "pretrain",
        "--config",
        p(&cfg),
        "--corpus",
        p(&dir.path().join("nowhere")),
        "--out",
        p(&dir.path().join("pre")),
    ]);
    assert_eq!(error_line(&out)["error"], "io");
}
