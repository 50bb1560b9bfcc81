//! Central-difference checks of every analytic gradient path, against
//! objectives rebuilt from public pieces with the text branch frozen.

use inneralign::data::PairedSample;
use inneralign::model::{causal_lm_loss, HiddenStates, Modality, Model, Task};
use inneralign::numerics::{Graph, Matrix, ParameterStore};
use inneralign::ot::{squared_euclidean_cost, transport_gradient, wasserstein_distance, RepresentationSet, SolverConfig};
use inneralign::training::{batch_gradient, text_states, AlignmentMethod, TrainConfig};

use super::{random_instance, rel_err, rng, sample_coordinates, tiny_model_config, tiny_samples};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Gradients below this are compared absolutely (both sides are noise).
pub const ABS_FLOOR: f64 = 1e-8;
pub const COORDS: usize = 120;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    /// Coordinates compared (those whose transport plans stayed fixed).
    pub checked: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    fn compare(&mut self, label: String, analytic: f64, fd: f64) {
        let rel = rel_err(analytic, fd);
        let ok = rel <= TOLERANCE || (analytic - fd).abs() <= ABS_FLOOR;
        if (analytic - fd).abs() > ABS_FLOOR {
            self.worst_rel = self.worst_rel.max(rel);
        }
        if !ok {
            self.failures.push(format!("{label}: analytic {analytic} vs finite difference {fd}"));
        }
        self.checked += 1;
    }

    pub fn passed(&self) -> bool {
        self.checked >= 100 && self.failures.is_empty()
    }
}

/// Value of the batch objective with the text branch frozen at `text_params`,
/// plus every transport plan it used (to detect plan switches).
pub struct Oracle<'a> {
    pub model: &'a Model,
    pub text_params: &'a ParameterStore<f64>,
    pub batch: &'a [PairedSample],
    pub task: Task,
    pub layers: &'a [usize],
    pub alpha: f64,
    pub contrastive_scale: Option<f64>,
}

impl Oracle<'_> {
    pub fn eval(&self, store: &ParameterStore<f64>) -> (f64, Vec<Matrix<f64>>) {
        let solver = SolverConfig::exact();
        let mut plans = Vec::new();
        let mut ce_sum = 0.0;
        let mut wass_sum = 0.0;
        let mut pooled_speech = Vec::new();
        let mut pooled_text = Vec::new();
        for s in self.batch {
            let mut g = Graph::new();
            let pass = self.model.forward(&mut g, store, s, Modality::Speech, self.task).unwrap();
            let ce = causal_lm_loss(&mut g, &pass);
            ce_sum += g.value(ce).item();
            let speech = HiddenStates::from_pass(&g, &pass);
            let (text, text_span) = text_states(self.model, self.text_params, s, self.task).unwrap();
            for &l in self.layers {
                let hs = RepresentationSet::from_matrix(&speech.span(l, &pass.spans.source)).unwrap();
                let ht = RepresentationSet::from_matrix(&text.span(l, &text_span)).unwrap();
                let sol = solver.solve(&squared_euclidean_cost(&hs, &ht).unwrap()).unwrap();
                wass_sum += sol.distance / self.layers.len() as f64;
                plans.push(sol.plan.entries().clone());
            }
            pooled_speech.push(mean_rows(&speech.span(0, &pass.spans.source)));
            pooled_text.push(mean_rows(&text.span(0, &text_span)));
        }
        let b = self.batch.len() as f64;
        let value = match self.contrastive_scale {
            Some(scale) => {
                self.alpha * ce_sum / b + (1.0 - self.alpha) * n_pair(&pooled_speech, &pooled_text, scale)
            }
            None if self.layers.is_empty() => self.alpha * ce_sum / b,
            None => (self.alpha * ce_sum + (1.0 - self.alpha) * wass_sum) / b,
        };
        (value, plans)
    }
}

fn mean_rows(m: &Matrix<f64>) -> Vec<f64> {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / m.rows() as f64)
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Mean over rows of softmax cross-entropy on `scale · cos(s_i, t_j)` with
/// the diagonal as the positive class.
pub fn n_pair(speech: &[Vec<f64>], text: &[Vec<f64>], scale: f64) -> f64 {
    let s: Vec<Vec<f64>> = speech.iter().map(|v| unit(v)).collect();
    let t: Vec<Vec<f64>> = text.iter().map(|v| unit(v)).collect();
    let mut total = 0.0;
    for i in 0..s.len() {
        let logits: Vec<f64> = t
            .iter()
            .map(|tj| scale * s[i].iter().zip(tj).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    total / s.len() as f64
}

pub fn nudge(store: &ParameterStore<f64>, (idx, off): (usize, usize), delta: f64) -> ParameterStore<f64> {
    let mut out = store.clone();
    let name = store.iter().nth(idx).unwrap().name.clone();
    out.get_mut(&name).unwrap().as_mut_slice()[off] += delta;
    out
}

fn plans_equal(a: &[Matrix<f64>], b: &[Matrix<f64>]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.max_abs_diff(y) <= 1e-12)
}

/// Compares analytic gradients to central differences of `objective` on
/// sampled coordinates, skipping any whose stencil switches a plan.
pub fn check(
    analytic: &[Matrix<f64>],
    params: &ParameterStore<f64>,
    objective: impl Fn(&ParameterStore<f64>) -> (f64, Vec<Matrix<f64>>),
    seed: u64,
) -> GradReport {
    let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.value.shape()).collect();
    let (_, base_plans) = objective(params);
    let mut report = GradReport::default();
    for coord in sample_coordinates(&shapes, COORDS, seed) {
        let (up, up_plans) = objective(&nudge(params, coord, STEP));
        let (down, down_plans) = objective(&nudge(params, coord, -STEP));
        if !plans_equal(&up_plans, &base_plans) || !plans_equal(&down_plans, &base_plans) {
            continue;
        }
        let fd = (up - down) / (2.0 * STEP);
        let name = &params.iter().nth(coord.0).unwrap().name;
        report.compare(format!("{name}[{}]", coord.1), analytic[coord.0].as_slice()[coord.1], fd);
    }
    report
}

pub struct Setup {
    pub model: Model,
    pub params: ParameterStore<f64>,
    pub batch: Vec<PairedSample>,
}

pub fn setup(seed: u64) -> Setup {
    let model = Model::new(tiny_model_config()).unwrap();
    let params = model.init_params(seed).cast::<f64>();
    Setup {
        model,
        params,
        batch: tiny_samples(seed + 100, 3),
    }
}

pub fn config(alpha: f64, alignment: AlignmentMethod) -> TrainConfig {
    TrainConfig {
        alpha,
        alignment,
        solver: SolverConfig::exact(),
        ..TrainConfig::default()
    }
}

/// `(batch loss, gradients)` from the trainer's own gradient routine.
pub fn analytic(s: &Setup, task: Task, layers: &[usize], cfg: &TrainConfig) -> (f64, Vec<Matrix<f64>>) {
    let refs: Vec<&PairedSample> = s.batch.iter().collect();
    let bg = batch_gradient(&s.model, &s.params, &refs, task, layers, cfg).unwrap();
    (bg.loss, bg.grads)
}

/// One model/training gradient path: analytic loss and gradient from the
/// trainer versus the frozen-text oracle. Returns the oracle-vs-trainer
/// loss discrepancy and the gradient report.
pub fn training_path(
    seed: u64,
    task: Task,
    layers: &[usize],
    alpha: f64,
    alignment: AlignmentMethod,
) -> (f64, GradReport) {
    let s = setup(seed);
    let cfg = config(alpha, alignment);
    let (loss, grads) = analytic(&s, task, layers, &cfg);
    let oracle = Oracle {
        model: &s.model,
        text_params: &s.params,
        batch: &s.batch,
        task,
        layers,
        alpha,
        contrastive_scale: (alignment == AlignmentMethod::Contrastive).then_some(cfg.contrastive_scale),
    };
    let loss_err = rel_err(loss, oracle.eval(&s.params).0);
    (loss_err, check(&grads, &s.params, |p| oracle.eval(p), seed + 1))
}

/// `transport_gradient` on random rectangular instances, skipping
/// coordinates whose stencil switches the exact plan.
pub fn transport_path(seed: u64, wanted: usize) -> GradReport {
    let mut r = rng(seed);
    let cfg = SolverConfig::exact();
    let mut report = GradReport::default();
    while report.checked < wanted {
        let (hs, ht) = random_instance(&mut r, 5, 4, false);
        let plan_at = |set: &RepresentationSet| cfg.solve(&squared_euclidean_cost(set, &ht).unwrap()).unwrap().plan;
        let plan = plan_at(&hs);
        let grad = transport_gradient(&hs, &ht, &plan).unwrap();
        for i in 0..hs.len() {
            for k in 0..hs.dim() {
                let shifted = |delta: f64| {
                    let mut m = hs.vectors().clone();
                    m.set(i, k, m.get(i, k) + delta);
                    RepresentationSet::new(m).unwrap()
                };
                let (up, down) = (shifted(STEP), shifted(-STEP));
                if plan_at(&up).entries().max_abs_diff(plan.entries()) > 1e-12
                    || plan_at(&down).entries().max_abs_diff(plan.entries()) > 1e-12
                {
                    continue;
                }
                let fd = (wasserstein_distance(&up, &ht, &cfg).unwrap() - wasserstein_distance(&down, &ht, &cfg).unwrap())
                    / (2.0 * STEP);
                report.compare(format!("hs[{i},{k}]"), grad.get(i, k), fd);
            }
        }
    }
    report
}

/// Every gradient path the trainer uses, by name.
pub fn all_paths() -> Vec<(&'static str, f64, GradReport)> {
    let mut out = vec![("transport_gradient", 0.0, transport_path(17, 120))];
    let cases: [(&str, u64, Task, &[usize], f64, AlignmentMethod); 4] = [
        ("recognition cross-entropy", 1, Task::Recognition, &[], 1.0, AlignmentMethod::Wasserstein),
        ("joint, layers 0,1,2", 3, Task::Translation, &[0, 1, 2], 0.5, AlignmentMethod::Wasserstein),
        ("joint, layer 1", 5, Task::Translation, &[1], 0.99, AlignmentMethod::Wasserstein),
        ("contrastive", 7, Task::Translation, &[], 0.5, AlignmentMethod::Contrastive),
    ];
    for (name, seed, task, layers, alpha, method) in cases {
        let (loss_err, report) = training_path(seed, task, layers, alpha, method);
        out.push((name, loss_err, report));
    }
    out
}
