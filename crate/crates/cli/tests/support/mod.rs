//! Helpers for driving the `inneralign` binary from tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A seconds-scale run: tiny corpus, tiny model, a handful of steps.
pub const SMALL_CONFIG: &str = r#"
seed = 3
corpus_size = 40

[synth]
vocab_size = 12
min_tokens = 2
max_tokens = 4
min_frames_per_token = 1
max_frames_per_token = 3
feature_dim = 4
valid_size = 6
test_size = 6

[model]
content_vocab = 12
model_dim = 8
num_layers = 2
num_heads = 2
ff_dim = 16
max_positions = 40
recognition_instruction = [13, 1, 2]
translation_instruction = [13, 3, 4]

[model.adapter]
window_size = 4
acoustic_dim = 4
num_heads = 2

[pretrain]
batch_size = 4
max_steps = 6
valid_interval = 3
max_gen_len = 6

[joint]
batch_size = 4
max_steps = 6
valid_interval = 3
max_gen_len = 6

[selection]
queries = 6
threshold = 0.0

[eval]
samples = 6
max_gen_len = 6
"#;

pub fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_inneralign"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .env_remove("INNERALIGN_THREADS")
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its stdout JSON summary.
pub fn run_ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.trim()).expect("one JSON summary line on stdout")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Directories produced by [`pipeline`].
pub struct PipelineRun {
    pub corpus: PathBuf,
    pub pretrain: PathBuf,
    pub select: PathBuf,
    pub joint: PathBuf,
    pub eval: PathBuf,
    pub score: PathBuf,
    pub project: PathBuf,
}

/// synth → pretrain → select-layers → train-joint → eval → align-score →
/// project, all under `root`.
pub fn pipeline(root: &Path, config: &Path) -> PipelineRun {
    pipeline_with(root, config, &[])
}

/// [`pipeline`] with `extra` appended to every command line.
pub fn pipeline_with(root: &Path, config: &Path, extra: &[&str]) -> PipelineRun {
    let run_ok = |args: &[&str]| run_ok(&[args, extra].concat());
    let r = PipelineRun {
        corpus: root.join("corpus"),
        pretrain: root.join("pretrain"),
        select: root.join("select"),
        joint: root.join("joint"),
        eval: root.join("eval"),
        score: root.join("score"),
        project: root.join("project"),
    };
    let cfg = p(config);
    run_ok(&["synth", "--config", cfg, "--out", p(&r.corpus)]);
    run_ok(&["pretrain", "--config", cfg, "--corpus", p(&r.corpus), "--out", p(&r.pretrain)]);
    let pre_ckpt = r.pretrain.join("final.mbck");
    run_ok(&[
        "select-layers",
        "--config",
        cfg,
        "--checkpoint",
        p(&pre_ckpt),
        "--corpus",
        p(&r.corpus),
        "--out",
        p(&r.select),
    ]);
    let selection = r.select.join("selection.jsonl");
    run_ok(&[
        "train-joint",
        "--config",
        cfg,
        "--checkpoint",
        p(&pre_ckpt),
        "--corpus",
        p(&r.corpus),
        "--selection",
        p(&selection),
        "--out",
        p(&r.joint),
    ]);
    let joint_ckpt = r.joint.join("final.mbck");
    let common = ["--config", cfg, "--checkpoint", p(&joint_ckpt), "--corpus", p(&r.corpus)];
    run_ok(&[&["eval"][..], &common, &["--out", p(&r.eval)]].concat());
    run_ok(
        &[
            &["align-score"][..],
            &common,
            &["--layers", "auto", "--selection", p(&selection), "--out", p(&r.score)],
        ]
        .concat(),
    );
    run_ok(&[&["project"][..], &common, &["--layer", "0", "--out", p(&r.project)]].concat());
    r
}
