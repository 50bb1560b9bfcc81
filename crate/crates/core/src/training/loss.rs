use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::model::{causal_lm_loss, token_accuracy, HiddenStates, Modality, Model, Task};
use crate::numerics::{Graph, Matrix, ParameterStore, Scalar, Var};
use crate::ot::{RepresentationSet, SolverConfig};

/// Cross-entropy, per-layer Wasserstein terms and their weighted total:
/// `total = α·ce + Σ_{l∈I} (1−α)/|I| · wass_l`, or `α·ce` when `I` is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub per_layer_wass: BTreeMap<usize, f64>,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(ce: f64, per_layer_wass: BTreeMap<usize, f64>, alpha: f64) -> Self {
        let mut total = alpha * ce;
        if !per_layer_wass.is_empty() {
            let w = (1.0 - alpha) / per_layer_wass.len() as f64;
            for &v in per_layer_wass.values() {
                total += w * v;
            }
        }
        Self {
            ce,
            per_layer_wass,
            alpha,
            total,
        }
    }

    pub fn mean_wass(&self) -> Option<f64> {
        if self.per_layer_wass.is_empty() {
            None
        } else {
            Some(self.per_layer_wass.values().sum::<f64>() / self.per_layer_wass.len() as f64)
        }
    }
}

pub(crate) fn check_layers(model: &Model, layers: &[usize]) -> Result<()> {
    let num_layers = model.config.num_layers;
    match layers.iter().find(|&&l| l > num_layers) {
        Some(&layer) => Err(Error::LayerOutOfRange { layer, num_layers }),
        None => Ok(()),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Text-pass hidden states. They are computed on a separate graph, so
/// nothing downstream can send a gradient into the text branch.
pub fn text_states<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    sample: &PairedSample,
    task: Task,
) -> Result<(HiddenStates<T>, std::ops::Range<usize>)> {
    let mut g = Graph::new();
    let pass = model.forward(&mut g, store, sample, Modality::Text, task)?;
    Ok((HiddenStates::from_pass(&g, &pass), pass.spans.source))
}

/// Graph state of one sample's joint objective, ready for backward.
pub struct SampleObjective<T> {
    pub graph: Graph<T>,
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Teacher-forced `(correct, total)` over response tokens.
    pub accuracy: (usize, usize),
    /// Speech-span states at layer 0, for pooled objectives.
    pub speech_layer0: Var,
}

/// Builds `α·CE + Σ_{l∈I} (1−α)/|I| · W_l` for one sample.
///
/// `W_l` is the transport cost between the speech-pass source span and the
/// text-pass transcript span at layer `l`; the plan and the text states are
/// constants, so the gradient reaches only the speech branch. With `α = 1`
/// the Wasserstein terms are measured but do not enter the graph.
pub fn sample_objective<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    sample: &PairedSample,
    task: Task,
    layers: &[usize],
    alpha: f64,
    solver: &SolverConfig,
) -> Result<SampleObjective<T>> {
    check_alpha(alpha)?;
    check_layers(model, layers)?;
    let mut g = Graph::new();
    let pass = model.forward(&mut g, store, sample, Modality::Speech, task)?;
    let ce = causal_lm_loss(&mut g, &pass);
    let accuracy = token_accuracy(&g, &pass);
    let speech_layer0 = g.slice_rows(pass.hidden[0], pass.spans.source.start, pass.spans.source.end);

    let mut wass = BTreeMap::new();
    let mut loss = g.scale(ce, T::from_f64_lossy(alpha));
    if !layers.is_empty() {
        let (text, text_span) = text_states(model, store, sample, task)?;
        let weight = T::from_f64_lossy((1.0 - alpha) / layers.len() as f64);
        for &l in layers {
            let speech = g.slice_rows(pass.hidden[l], pass.spans.source.start, pass.spans.source.end);
            let target = text.span(l, &text_span);
            let sol = solver.solve(&crate::ot::squared_euclidean_cost(
                &RepresentationSet::from_matrix(g.value(speech))?,
                &RepresentationSet::from_matrix(&target)?,
            )?)?;
            wass.insert(l, sol.distance);
            if alpha < 1.0 {
                let plan: Matrix<T> = sol.plan.entries().cast();
                let w = g.transport_cost(speech, target, plan);
                let w = g.scale(w, weight);
                loss = g.add(loss, w);
            }
        }
    }
    let ce_value = g.value(ce).item().to_f64_lossy();
    Ok(SampleObjective {
        graph: g,
        loss,
        breakdown: LossBreakdown::combine(ce_value, wass, alpha),
        accuracy,
        speech_layer0,
    })
}

/// Loss values of the joint objective for one sample.
pub fn joint_loss(
    model: &Model,
    store: &ParameterStore<f32>,
    sample: &PairedSample,
    layers: &[usize],
    alpha: f64,
    solver: &SolverConfig,
) -> Result<LossBreakdown> {
    Ok(sample_objective(model, store, sample, Task::Translation, layers, alpha, solver)?.breakdown)
}

/// Multi-class N-pair loss over a batch of pooled vectors.
///
/// Rows of `speech` and `text` are length-normalized; row `i` of `speech`
/// treats row `i` of `text` as its positive and the other rows as negatives,
/// with logits `scale · cos`. Returns the mean softmax cross-entropy.
pub fn contrastive_baseline_loss<T: Scalar>(g: &mut Graph<T>, speech: Var, text: Var, scale: T) -> Result<Var> {
    let (b, d) = g.value(speech).shape();
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs a batch of at least 2, got {b}"
        )));
    }
    if g.value(text).shape() != (b, d) {
        return Err(Error::Shape("speech and text batches differ in shape".into()));
    }
    let s = g.normalize_rows(speech);
    let t = g.normalize_rows(text);
    let sim = g.matmul_nt(s, t);
    let logits = g.scale(sim, scale);
    let targets: Vec<(usize, usize)> = (0..b).map(|i| (i, i)).collect();
    Ok(g.cross_entropy(logits, &targets))
}
