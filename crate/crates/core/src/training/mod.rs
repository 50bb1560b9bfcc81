//! Stage-1 speech pretraining and stage-3 joint CE + Wasserstein training.

mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{
    contrastive_baseline_loss, joint_loss, sample_objective, text_states, LossBreakdown, SampleObjective,
};

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::model::{Modality, Model, Task};
use crate::numerics::{
    save_checkpoint, AdamW, AdamWConfig, Graph, Matrix, OptimizerState, ParameterStore, Scalar, Schedule,
};
use crate::ot::{RepresentationSet, SolverConfig};

/// How the alignment term is formed during joint training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMethod {
    /// Per-layer Wasserstein distance between speech and transcript spans.
    #[default]
    Wasserstein,
    /// N-pair contrastive loss on mean-pooled layer-0 spans.
    Contrastive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub alignment: AlignmentMethod,
    /// Inverse temperature of the contrastive baseline.
    pub contrastive_scale: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub valid_interval: usize,
    /// Validations without a new best token accuracy before stopping.
    pub patience: usize,
    pub early_stopping: bool,
    /// Cap on validation samples per validation (0 = all).
    pub max_valid_samples: usize,
    pub max_gen_len: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub schedule: Schedule,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            alignment: AlignmentMethod::Wasserstein,
            contrastive_scale: 10.0,
            batch_size: 8,
            max_steps: 2000,
            valid_interval: 250,
            patience: 4,
            early_stopping: true,
            max_valid_samples: 100,
            max_gen_len: 24,
            seed: 0,
            solver: SolverConfig::default(),
            schedule: Schedule {
                warmup_start: 1e-6,
                peak: 1e-3,
                floor: 1e-4,
                warmup_steps: 100,
                total_steps: 2000,
            },
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.valid_interval == 0 {
            return Err(Error::InvalidArgument("batch_size and valid_interval must be >= 1".into()));
        }
        if self.alignment == AlignmentMethod::Contrastive && self.batch_size < 2 {
            return Err(Error::InvalidArgument("contrastive alignment needs batch_size >= 2".into()));
        }
        self.solver.validate()?;
        self.schedule.validate()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub split: String,
    pub ce: f64,
    /// Per-layer Wasserstein distance, keyed by layer index.
    pub wass: BTreeMap<usize, f64>,
    pub total: f64,
    pub token_acc: f64,
    /// Greedy exact match; only measured on validation records.
    pub exact_match: Option<f64>,
    pub lr: f64,
}

impl MetricRecord {
    pub fn mean_wass(&self) -> Option<f64> {
        (!self.wass.is_empty()).then(|| self.wass.values().sum::<f64>() / self.wass.len() as f64)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric records always serialize")
    }
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Stops once validation accuracy fails to beat the running best for
/// `patience` consecutive validations.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records one validation; returns `true` when training should stop.
    pub fn observe(&mut self, accuracy: f64) -> bool {
        match self.best {
            Some(b) if accuracy <= b => self.since_best += 1,
            _ => {
                self.best = Some(accuracy);
                self.since_best = 0;
            }
        }
        self.since_best >= self.patience
    }

    /// True when the most recent observation set a new best.
    pub fn improved(&self) -> bool {
        self.since_best == 0 && self.best.is_some()
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Aggregate task metrics over an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub ce: f64,
    pub token_acc: f64,
    pub exact_match: f64,
    pub wass: BTreeMap<usize, f64>,
    pub samples: usize,
}

/// Teacher-forced CE and token accuracy, greedy exact match, and per-layer
/// mean Wasserstein (speech span vs transcript span) over `samples`.
///
/// Token accuracy is pooled over all response tokens (including `eos`).
pub fn evaluate(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    modality: Modality,
    task: Task,
    layers: &[usize],
    solver: &SolverConfig,
    max_gen_len: usize,
) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    loss::check_layers(model, layers)?;
    struct One {
        ce: f64,
        correct: usize,
        total: usize,
        exact: bool,
        wass: Vec<f64>,
    }
    let per: Vec<One> = samples
        .par_iter()
        .map(|s| -> Result<One> {
            let mut g = Graph::new();
            let pass = model.forward(&mut g, store, s, modality, task)?;
            let ce = crate::model::causal_lm_loss(&mut g, &pass);
            let (correct, total) = crate::model::token_accuracy(&g, &pass);
            let generated = model.generate(store, s, modality, task, max_gen_len)?;
            let exact = generated == model.response_tokens(s, task);
            let mut wass = Vec::with_capacity(layers.len());
            if !layers.is_empty() {
                let speech = if modality == Modality::Speech {
                    crate::model::HiddenStates::from_pass(&g, &pass)
                } else {
                    let mut gs = Graph::new();
                    let sp = model.forward(&mut gs, store, s, Modality::Speech, task)?;
                    crate::model::HiddenStates::from_pass(&gs, &sp)
                };
                let speech_span = speech_source_span(model, s, task);
                let (text, text_span) = text_states(model, store, s, task)?;
                for &l in layers {
                    let hs = RepresentationSet::from_matrix(&speech.span(l, &speech_span))?;
                    let ht = RepresentationSet::from_matrix(&text.span(l, &text_span))?;
                    wass.push(crate::ot::wasserstein_distance(&hs, &ht, solver)?);
                }
            }
            Ok(One {
                ce: g.value(ce).item() as f64,
                correct,
                total,
                exact,
                wass,
            })
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let correct: usize = per.iter().map(|o| o.correct).sum();
    let total: usize = per.iter().map(|o| o.total).sum();
    let mut wass = BTreeMap::new();
    for (k, &l) in layers.iter().enumerate() {
        wass.insert(l, per.iter().map(|o| o.wass[k]).sum::<f64>() / n);
    }
    Ok(EvalMetrics {
        ce: per.iter().map(|o| o.ce).sum::<f64>() / n,
        token_acc: correct as f64 / total.max(1) as f64,
        exact_match: per.iter().filter(|o| o.exact).count() as f64 / n,
        wass,
        samples: per.len(),
    })
}

/// Span of the speech tokens in the speech pass.
pub fn speech_source_span(model: &Model, sample: &PairedSample, task: Task) -> std::ops::Range<usize> {
    let start = model.instruction(task).len();
    start..start + model.config.adapter.output_len(sample.speech.n_frames())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final parameters, or the best-validation parameters when early
    /// stopping is enabled.
    pub params: ParameterStore<f32>,
    pub log: Vec<MetricRecord>,
    pub steps: usize,
    pub stopped_early: bool,
    pub best_step: Option<usize>,
}

/// Speech-to-transcript CE training.
pub fn pretrain_stage(
    model: &Model,
    params: ParameterStore<f32>,
    train: &[PairedSample],
    valid: &[PairedSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        alpha: 1.0,
        early_stopping: false,
        ..cfg.clone()
    };
    run_stage(model, params, train, valid, Task::Recognition, &[], &cfg, out_dir)
}

/// Speech-to-target training with the joint objective on `layers`.
pub fn joint_train_stage(
    model: &Model,
    params: ParameterStore<f32>,
    train: &[PairedSample],
    valid: &[PairedSample],
    layers: &[usize],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    run_stage(model, params, train, valid, Task::Translation, layers, cfg, out_dir)
}

struct StepResult<T> {
    grads: Vec<(usize, Matrix<T>)>,
    stats: SampleStats,
}

/// Per-sample loss values and teacher-forced accuracy from one step.
#[derive(Clone, Debug)]
pub struct SampleStats {
    pub breakdown: LossBreakdown,
    pub correct: usize,
    pub total: usize,
}

/// Batch-mean objective and its parameter gradient.
#[derive(Clone, Debug)]
pub struct BatchGradient<T> {
    /// Mean of the per-sample totals (for the contrastive method, the
    /// batch-level contrastive term is counted once).
    pub loss: f64,
    /// One gradient per store entry, in store order.
    pub grads: Vec<Matrix<T>>,
    pub samples: Vec<SampleStats>,
}

/// Gradient of the batch objective the trainer optimizes:
/// `mean_i total_i` for the Wasserstein method, and
/// `α·mean_i ce_i + (1−α)·contrastive(batch)` for the contrastive one.
pub fn batch_gradient<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    batch: &[&PairedSample],
    task: Task,
    layers: &[usize],
    cfg: &TrainConfig,
) -> Result<BatchGradient<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let (results, loss) = match cfg.alignment {
        AlignmentMethod::Contrastive if cfg.alpha < 1.0 => contrastive_step(model, store, batch, task, cfg)?,
        _ => {
            let r = wasserstein_step(model, store, batch, task, layers, cfg)?;
            let loss = r.iter().map(|s| s.stats.breakdown.total).sum::<f64>() / r.len() as f64;
            (r, loss)
        }
    };
    let mut grads: Vec<Matrix<T>> = store
        .iter()
        .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
        .collect();
    let inv = T::one() / T::from_usize(batch.len()).expect("batch size fits the scalar type");
    let mut samples = Vec::with_capacity(results.len());
    for r in results {
        for (idx, g) in &r.grads {
            for (acc, &v) in grads[*idx].as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc = *acc + v * inv;
            }
        }
        samples.push(r.stats);
    }
    Ok(BatchGradient { loss, grads, samples })
}

fn wasserstein_step<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    batch: &[&PairedSample],
    task: Task,
    layers: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<StepResult<T>>> {
    batch
        .par_iter()
        .map(|s| {
            let obj = sample_objective(model, store, s, task, layers, cfg.alpha, &cfg.solver)?;
            let grads = obj.graph.backward(obj.loss)?;
            Ok(StepResult {
                grads: obj.graph.param_grads(&grads).map(|(i, g)| (i, g.clone())).collect(),
                stats: SampleStats {
                    breakdown: obj.breakdown,
                    correct: obj.accuracy.0,
                    total: obj.accuracy.1,
                },
            })
        })
        .collect()
}

/// CE per sample plus a batch-level contrastive term on mean-pooled layer-0
/// spans. The contrastive gradient with respect to each pooled speech vector
/// is computed on a small batch graph and fed back into the sample graphs
/// as a linear term, so every sample keeps its own tape. Pooled text
/// vectors are constants, as in the Wasserstein method.
fn contrastive_step<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    batch: &[&PairedSample],
    task: Task,
    cfg: &TrainConfig,
) -> Result<(Vec<StepResult<T>>, f64)> {
    let mut objectives: Vec<(SampleObjective<T>, crate::numerics::Var, Vec<T>)> = batch
        .par_iter()
        .map(|s| {
            let mut obj = sample_objective(model, store, s, task, &[], cfg.alpha, &cfg.solver)?;
            let pooled = obj.graph.mean_rows(obj.speech_layer0);
            let (text, span) = text_states(model, store, s, task)?;
            let t = text.span(0, &span);
            let n = T::from_usize(t.rows()).expect("span length fits the scalar type");
            let mut tp = vec![T::zero(); t.cols()];
            for r in 0..t.rows() {
                for (o, &v) in tp.iter_mut().zip(t.row(r)) {
                    *o = *o + v / n;
                }
            }
            Ok((obj, pooled, tp))
        })
        .collect::<Result<_>>()?;

    let d = model.config.model_dim;
    let b = objectives.len();
    let mut speech_rows = Vec::with_capacity(b * d);
    let mut text_rows = Vec::with_capacity(b * d);
    for (obj, pooled, tp) in &objectives {
        speech_rows.extend_from_slice(obj.graph.value(*pooled).as_slice());
        text_rows.extend_from_slice(tp);
    }
    let mut cg = Graph::<T>::new();
    let sp = cg.input(Matrix::from_vec(b, d, speech_rows));
    let tx = cg.constant(Matrix::from_vec(b, d, text_rows));
    let cl = contrastive_baseline_loss(&mut cg, sp, tx, T::from_f64_lossy(cfg.contrastive_scale))?;
    let cl_value = cg.value(cl).item().to_f64_lossy();
    let cgrads = cg.backward(cl)?;
    let dpooled = cgrads.get(sp).expect("pooled speech input has a gradient").clone();
    // Batch gradients are averaged over samples later; undo that for the
    // batch-level term.
    let weight = T::from_f64_lossy((1.0 - cfg.alpha) * b as f64);

    let results = objectives
        .par_iter_mut()
        .enumerate()
        .map(|(i, (obj, pooled, _))| {
            let g = &mut obj.graph;
            let coeff = Matrix::from_vec(d, 1, dpooled.row(i).iter().map(|&v| v * weight).collect());
            let c = g.constant(coeff);
            let lin = g.matmul(*pooled, c);
            let loss = g.add(obj.loss, lin);
            let grads = obj.graph.backward(loss)?;
            let mut breakdown = obj.breakdown.clone();
            breakdown.total = cfg.alpha * breakdown.ce + (1.0 - cfg.alpha) * cl_value;
            Ok(StepResult {
                grads: obj.graph.param_grads(&grads).map(|(i, g)| (i, g.clone())).collect(),
                stats: SampleStats {
                    breakdown,
                    correct: obj.accuracy.0,
                    total: obj.accuracy.1,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ce_mean = results.iter().map(|r| r.stats.breakdown.ce).sum::<f64>() / b as f64;
    Ok((results, cfg.alpha * ce_mean + (1.0 - cfg.alpha) * cl_value))
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: &Model,
    mut params: ParameterStore<f32>,
    train: &[PairedSample],
    valid: &[PairedSample],
    task: Task,
    layers: &[usize],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss::check_layers(model, layers)?;
    if train.is_empty() && cfg.max_steps > 0 {
        return Err(Error::Empty("training set".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let valid = if cfg.max_valid_samples > 0 && valid.len() > cfg.max_valid_samples {
        &valid[..cfg.max_valid_samples]
    } else {
        valid
    };
    let mut schedule = cfg.schedule.clone();
    if schedule.total_steps == 0 {
        schedule.total_steps = cfg.max_steps;
    }
    let opt = AdamW::new(cfg.optimizer.clone(), schedule);
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = Vec::new();
    let mut best: Option<(usize, ParameterStore<f32>)> = None;
    let mut stopped_early = false;
    let mut steps = 0;

    let mut window = Accum::default();
    while steps < cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let step = match batch_gradient(model, &params, &batch, task, layers, cfg) {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => return Err(diverged(&params, out_dir, steps, what)),
            Err(e) => return Err(e),
        };
        params.zero_grads();
        for (idx, g) in step.grads.iter().enumerate() {
            params.accumulate_grad(idx, g, 1.0);
        }
        for s in &step.samples {
            window.add(s);
        }
        let lr = match opt.step(&mut params, &mut state) {
            Ok(lr) => lr,
            Err(Error::NonFinite(what)) => return Err(diverged(&params, out_dir, steps, what)),
            Err(e) => return Err(e),
        };
        steps += 1;

        if steps % cfg.valid_interval == 0 || steps == cfg.max_steps {
            log.push(window.record(steps, lr));
            window = Accum::default();
            if !valid.is_empty() {
                let m = evaluate(model, &params, valid, Modality::Speech, task, layers, &cfg.solver, cfg.max_gen_len)?;
                let breakdown = LossBreakdown::combine(m.ce, m.wass.clone(), cfg.alpha);
                log.push(MetricRecord {
                    step: steps,
                    split: "valid".into(),
                    ce: m.ce,
                    wass: m.wass,
                    total: breakdown.total,
                    token_acc: m.token_acc,
                    exact_match: Some(m.exact_match),
                    lr,
                });
                if let Some(dir) = out_dir {
                    save_checkpoint(&params, &checkpoint_path(dir, steps))?;
                }
                let stop = stopper.observe(m.token_acc);
                if cfg.early_stopping {
                    if stopper.improved() {
                        best = Some((steps, params.clone()));
                    }
                    if stop {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        write_metrics(&dir.join("metrics.jsonl"), &log)?;
    }
    let (best_step, params) = match best {
        Some((s, p)) => (Some(s), p),
        None => (None, params),
    };
    if let Some(dir) = out_dir {
        save_checkpoint(&params, &dir.join("final.mbck"))?;
    }
    Ok(TrainOutcome {
        params,
        log,
        steps,
        stopped_early,
        best_step,
    })
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step{step:06}.mbck"))
}

fn diverged(params: &ParameterStore<f32>, out_dir: Option<&Path>, step: usize, what: String) -> Error {
    if let Some(dir) = out_dir {
        // Best effort: the divergence error is what the caller needs.
        let _ = save_checkpoint(params, &dir.join("diverged.mbck"));
    }
    Error::Diverged { step, what }
}

#[derive(Default)]
struct Accum {
    n: usize,
    ce: f64,
    total: f64,
    wass: BTreeMap<usize, f64>,
    correct: usize,
    tokens: usize,
}

impl Accum {
    fn add(&mut self, r: &SampleStats) {
        self.n += 1;
        self.ce += r.breakdown.ce;
        self.total += r.breakdown.total;
        for (&l, &w) in &r.breakdown.per_layer_wass {
            *self.wass.entry(l).or_insert(0.0) += w;
        }
        self.correct += r.correct;
        self.tokens += r.total;
    }

    fn record(&self, step: usize, lr: f64) -> MetricRecord {
        let n = self.n.max(1) as f64;
        MetricRecord {
            step,
            split: "train".into(),
            ce: self.ce / n,
            wass: self.wass.iter().map(|(&l, &w)| (l, w / n)).collect(),
            total: self.total / n,
            token_acc: self.correct as f64 / self.tokens.max(1) as f64,
            exact_match: None,
            lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_trace() {
        // Best at validation 3, then four validations without improvement.
        let accs = [0.2, 0.4, 0.6, 0.6, 0.5, 0.55, 0.6];
        let mut s = EarlyStopping::new(4);
        let mut stopped_at = None;
        for (i, &a) in accs.iter().enumerate() {
            if s.observe(a) {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(7));
        assert_eq!(s.best(), Some(0.6));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2);
        assert!(!s.observe(0.5));
        assert!(!s.observe(0.4));
        assert!(!s.observe(0.6));
        assert!(s.improved());
        assert!(!s.observe(0.6));
        assert!(s.observe(0.1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig {
                alpha: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                alignment: AlignmentMethod::Contrastive,
                batch_size: 1,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
