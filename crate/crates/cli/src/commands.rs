use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use inneralign::data::{load_split, synthesize_corpus, PairedSample, Split};
use inneralign::diagnostics::{
    alignment_score, generate_all, generation_metrics, projection, write_generations, write_projection,
};
use inneralign::model::{Modality, Model, Task};
use inneralign::numerics::{load_checkpoint, ParameterStore};
use inneralign::retrieval::{
    layer_records, layer_retrieval, read_selection_report, select_layers as select, write_selection_report,
};
use inneralign::training::{evaluate, joint_train_stage, pretrain_stage};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::layers::LayerSpec;
use crate::{ModalityArg, SplitArg, TaskArg};

/// Exclusive claim on a run directory, released on drop.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    inneralign::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values always serialize");
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}

fn report(value: serde_json::Value) {
    println!("{value}");
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    }
}

fn model_and_params(cfg: &RunConfig, checkpoint: &Path) -> Result<(Model, ParameterStore<f32>), CliError> {
    let model = Model::new(cfg.model.clone())?;
    let params = load_checkpoint(checkpoint)?;
    model.check_params(&params).map_err(|e| {
        inneralign::Error::Format {
            path: checkpoint.to_path_buf(),
            reason: format!("checkpoint does not match model config: {e}"),
        }
    })?;
    Ok((model, params))
}

fn held_out(corpus: &Path, split: Split, limit: usize) -> Result<Vec<PairedSample>, CliError> {
    let mut samples = load_split(corpus, split)?;
    samples.truncate(limit);
    if samples.is_empty() {
        return Err(inneralign::Error::Empty(format!("{split} split of {}", corpus.display())).into());
    }
    Ok(samples)
}

fn resolve_layers(spec: &LayerSpec, selection: Option<&Path>) -> Result<(Vec<usize>, &'static str), CliError> {
    match spec {
        LayerSpec::Explicit(l) => Ok((l.clone(), "manual")),
        LayerSpec::Auto => {
            let path = selection.ok_or_else(|| CliError::Usage("--layers auto needs --selection".into()))?;
            let (_, sel) = read_selection_report(path)?;
            Ok((sel.selected, "selection"))
        }
    }
}

pub fn synth(config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let _lock = RunLock::acquire(out)?;
    let manifests = synthesize_corpus(cfg.seed, cfg.corpus_size, &cfg.synth, out)?;
    cfg.echo(out)?;
    let counts: serde_json::Map<_, _> = manifests
        .iter()
        .map(|m| (m.split.to_string(), json!(m.records.len())))
        .collect();
    report(json!({ "command": "synth", "out": out, "samples": counts }));
    Ok(())
}

pub fn pretrain(config: Option<&Path>, corpus: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let _lock = RunLock::acquire(out)?;
    cfg.echo(out)?;
    let train = load_split(corpus, Split::Train)?;
    let valid = load_split(corpus, Split::Valid)?;
    let model = Model::new(cfg.model.clone())?;
    let outcome = pretrain_stage(&model, model.init_params(cfg.seed), &train, &valid, &cfg.pretrain, Some(out))?;
    let last = outcome.log.iter().rev().find(|r| r.split == "valid");
    report(json!({
        "command": "pretrain",
        "steps": outcome.steps,
        "checkpoint": out.join("final.mbck"),
        "valid_token_acc": last.map(|r| r.token_acc),
    }));
    Ok(())
}

pub fn select_layers(config: Option<&Path>, checkpoint: &Path, corpus: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let _lock = RunLock::acquire(out)?;
    cfg.echo(out)?;
    let (model, params) = model_and_params(&cfg, checkpoint)?;
    let samples = held_out(corpus, Split::Test, cfg.selection.queries)?;
    let reports = layer_retrieval(&model, &params, &samples, Task::Translation, &cfg.joint.solver)?;
    let mrrs: Vec<f64> = reports.iter().map(|r| r.mrr).collect();
    let selection = select(&mrrs, cfg.selection.threshold)?;
    let path = out.join("selection.jsonl");
    write_selection_report(&path, &layer_records(&reports, &selection))?;
    if selection.is_empty() {
        eprintln!(
            "{}",
            json!({ "warning": "empty_selection", "message": "no layer exceeds the threshold; joint training reduces to cross-entropy" })
        );
    }
    report(json!({
        "command": "select-layers",
        "mrr": mrrs,
        "selected": selection.selected,
        "report": path,
    }));
    Ok(())
}

pub fn train_joint(
    config: Option<&Path>,
    checkpoint: &Path,
    corpus: &Path,
    selection: Option<&Path>,
    layers: &LayerSpec,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let (layers, source) = resolve_layers(layers, selection)?;
    let _lock = RunLock::acquire(out)?;
    cfg.echo(out)?;
    write_json(&out.join("layers.json"), &json!({ "layers": layers, "source": source }))?;
    let (model, params) = model_and_params(&cfg, checkpoint)?;
    let train = load_split(corpus, Split::Train)?;
    let valid = load_split(corpus, Split::Valid)?;
    let outcome = joint_train_stage(&model, params, &train, &valid, &layers, &cfg.joint, Some(out))?;
    report(json!({
        "command": "train-joint",
        "layers": layers,
        "steps": outcome.steps,
        "stopped_early": outcome.stopped_early,
        "best_step": outcome.best_step,
        "checkpoint": out.join("final.mbck"),
    }));
    Ok(())
}

pub fn eval(
    config: Option<&Path>,
    checkpoint: &Path,
    corpus: &Path,
    modality: ModalityArg,
    task: TaskArg,
    split: SplitArg,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let _lock = RunLock::acquire(out)?;
    let (model, params) = model_and_params(&cfg, checkpoint)?;
    let samples = held_out(corpus, split_of(split), cfg.eval.samples)?;
    let modality = match modality {
        ModalityArg::Speech => Modality::Speech,
        ModalityArg::Text => Modality::Text,
    };
    let task = match task {
        TaskArg::Translation => Task::Translation,
        TaskArg::Recognition => Task::Recognition,
    };
    let forced = evaluate(&model, &params, &samples, modality, task, &[], &cfg.joint.solver, cfg.eval.max_gen_len)?;
    let records = generate_all(&model, &params, &samples, modality, task, cfg.eval.max_gen_len)?;
    let generated = generation_metrics(&records)?;
    write_generations(&out.join("generations.jsonl"), &records)?;
    let summary = json!({
        "command": "eval",
        "modality": format!("{modality:?}").to_lowercase(),
        "task": format!("{task:?}").to_lowercase(),
        "samples": samples.len(),
        "ce": forced.ce,
        "teacher_forced_token_acc": forced.token_acc,
        "generated_token_acc": generated.token_acc,
        "exact_match": generated.exact_match,
    });
    write_json(&out.join("eval.json"), &summary)?;
    report(summary);
    Ok(())
}

pub fn align_score(
    config: Option<&Path>,
    checkpoint: &Path,
    corpus: &Path,
    layers: &LayerSpec,
    selection: Option<&Path>,
    split: SplitArg,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let (layers, _) = resolve_layers(layers, selection)?;
    let _lock = RunLock::acquire(out)?;
    let (model, params) = model_and_params(&cfg, checkpoint)?;
    let samples = held_out(corpus, split_of(split), cfg.eval.samples)?;
    let score = alignment_score(&model, &params, &samples, &layers, &cfg.joint.solver)?;
    let summary = json!({
        "command": "align-score",
        "per_layer": score.per_layer,
        // JSON has no infinity; the degenerate flag carries that case.
        "log_score": if score.degenerate { None } else { Some(score.log_score) },
        "degenerate": score.degenerate,
        "samples": score.samples,
    });
    write_json(&out.join("align_score.json"), &summary)?;
    report(summary);
    Ok(())
}

pub fn project(
    config: Option<&Path>,
    checkpoint: &Path,
    corpus: &Path,
    layer: usize,
    split: SplitArg,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let _lock = RunLock::acquire(out)?;
    let (model, params) = model_and_params(&cfg, checkpoint)?;
    let samples = held_out(corpus, split_of(split), cfg.eval.samples)?;
    let export = projection(&model, &params, &samples, layer)?;
    write_projection(&export, out)?;
    if let Some(w) = export.warning() {
        eprintln!("{}", json!({ "warning": "rank_deficient", "message": w }));
    }
    report(json!({
        "command": "project",
        "layer": layer,
        "points": export.ids.len(),
        "projected": export.coords.is_some(),
    }));
    Ok(())
}
