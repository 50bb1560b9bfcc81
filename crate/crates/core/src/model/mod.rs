//! Toy speech-text model: a windowed query-attention adapter feeding a small
//! pre-norm decoder-only transformer.
//!
//! Every forward pass records hidden states at layer 0 (the input sequence
//! after embedding and positional encoding) and after each transformer block,
//! together with a [`SpanMap`] locating the instruction, source (speech
//! tokens or transcript tokens) and response segments.

mod config;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use config::{AdapterConfig, ModelConfig};

use crate::data::{FeatureSequence, PairedSample};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, ParameterStore, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
}

/// Which response the model is asked to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Respond with the transcript.
    Recognition,
    /// Respond with the target-language sequence.
    Translation,
}

/// Segment boundaries within one forward sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanMap {
    pub instruction: Range<usize>,
    /// Speech tokens in the speech pass, transcript tokens in the text pass.
    pub source: Range<usize>,
    pub response: Range<usize>,
}

impl SpanMap {
    pub fn len(&self) -> usize {
        self.response.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, class)` pairs for next-token prediction of every response token.
    pub fn loss_targets(&self, response: &[usize]) -> Vec<(usize, usize)> {
        response
            .iter()
            .enumerate()
            .map(|(j, &tok)| (self.response.start + j - 1, tok))
            .collect()
    }
}

/// Graph handles produced by [`Model::forward`].
pub struct ForwardPass {
    pub logits: Var,
    /// `num_layers + 1` entries; entry 0 is the embedding layer.
    pub hidden: Vec<Var>,
    pub spans: SpanMap,
    /// Teacher-forced response tokens (task response followed by `eos`).
    pub response: Vec<usize>,
}

/// Per-layer hidden-state values of one forward pass.
#[derive(Clone, Debug)]
pub struct HiddenStates<T> {
    pub layers: Vec<Matrix<T>>,
}

impl<T: Scalar> HiddenStates<T> {
    pub fn from_pass(g: &Graph<T>, pass: &ForwardPass) -> Self {
        Self {
            layers: pass.hidden.iter().map(|&v| g.value(v).clone()).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Rows `span` of layer `layer`.
    pub fn span(&self, layer: usize, span: &Range<usize>) -> Matrix<T> {
        let m = &self.layers[layer];
        let cols = m.cols();
        Matrix::from_vec(
            span.len(),
            cols,
            m.as_slice()[span.start * cols..span.end * cols].to_vec(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn instruction(&self, task: Task) -> &[usize] {
        match task {
            Task::Recognition => &self.config.recognition_instruction,
            Task::Translation => &self.config.translation_instruction,
        }
    }

    /// Task response without the trailing `eos`.
    pub fn response_tokens<'a>(&self, sample: &'a PairedSample, task: Task) -> &'a [usize] {
        match task {
            Task::Recognition => &sample.transcript,
            Task::Translation => &sample.target,
        }
    }

    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init_params(&self, seed: u64) -> ParameterStore<f32> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let d = c.model_dim;
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| dist.sample(&mut rng) as f32).collect(),
            )
        };
        let std = c.init_std;
        let residual_std = std / (2.0 * c.num_layers.max(1) as f64).sqrt();
        let ones = |n: usize| Matrix::filled(1, n, 1.0f32);
        let zeros = |n: usize| Matrix::zeros(1, n);

        store.insert("embed.tokens", normal(c.vocab_size(), d, std));
        store.insert("embed.positions", normal(c.max_positions, d, std));

        let a = &c.adapter;
        let frame_std = 1.0 / (a.acoustic_dim as f64).sqrt();
        store.insert("adapter.frame_proj.weight", normal(a.acoustic_dim, d, frame_std));
        store.insert("adapter.frame_proj.bias", zeros(d));
        store.insert("adapter.window_pos", normal(a.window_size, d, std));
        store.insert("adapter.queries", normal(a.queries_per_window, d, std));
        store.insert("adapter.ln_kv.gamma", ones(d));
        store.insert("adapter.ln_kv.beta", zeros(d));
        for p in ["q", "k", "v"] {
            store.insert(&format!("adapter.attn.{p}.weight"), normal(d, d, std));
        }
        store.insert("adapter.attn.o.weight", normal(d, d, std));
        store.insert("adapter.attn.o.bias", zeros(d));
        store.insert("adapter.ln_ff.gamma", ones(d));
        store.insert("adapter.ln_ff.beta", zeros(d));
        store.insert("adapter.ff.up.weight", normal(d, c.ff_dim, std));
        store.insert("adapter.ff.up.bias", zeros(c.ff_dim));
        store.insert("adapter.ff.down.weight", normal(c.ff_dim, d, std));
        store.insert("adapter.ff.down.bias", zeros(d));
        store.insert("adapter.out_proj.weight", normal(d, d, std));
        store.insert("adapter.out_proj.bias", zeros(d));

        for l in 0..c.num_layers {
            let p = format!("blocks.{l}");
            store.insert(&format!("{p}.ln1.gamma"), ones(d));
            store.insert(&format!("{p}.ln1.beta"), zeros(d));
            for w in ["q", "k", "v"] {
                store.insert(&format!("{p}.attn.{w}.weight"), normal(d, d, std));
            }
            store.insert(&format!("{p}.attn.o.weight"), normal(d, d, residual_std));
            store.insert(&format!("{p}.attn.o.bias"), zeros(d));
            store.insert(&format!("{p}.ln2.gamma"), ones(d));
            store.insert(&format!("{p}.ln2.beta"), zeros(d));
            store.insert(&format!("{p}.ff.up.weight"), normal(d, c.ff_dim, std));
            store.insert(&format!("{p}.ff.up.bias"), zeros(c.ff_dim));
            store.insert(&format!("{p}.ff.down.weight"), normal(c.ff_dim, d, residual_std));
            store.insert(&format!("{p}.ff.down.bias"), zeros(d));
        }
        store.insert("final_ln.gamma", ones(d));
        store.insert("final_ln.beta", zeros(d));
        store.insert("lm_head.weight", normal(d, c.vocab_size(), std));
        store.insert("lm_head.bias", zeros(c.vocab_size()));
        store
    }

    fn linear<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        prefix: &str,
        x: Var,
        bias: bool,
    ) -> Result<Var> {
        let w = g.param(store, &format!("{prefix}.weight"))?;
        let y = g.matmul(x, w);
        if bias {
            let b = g.param(store, &format!("{prefix}.bias"))?;
            Ok(g.add_row(y, b))
        } else {
            Ok(y)
        }
    }

    fn layer_norm<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, prefix: &str, x: Var) -> Result<Var> {
        let gamma = g.param(store, &format!("{prefix}.gamma"))?;
        let beta = g.param(store, &format!("{prefix}.beta"))?;
        Ok(g.layer_norm(x, gamma, beta, T::from_f64_lossy(1e-5)))
    }

    /// Multi-head attention of `queries` over `keys`/`values` (already
    /// projected), returning the concatenated heads.
    fn attend<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let d = g.value(q).cols();
        let hd = d / heads;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let qh = g.slice_cols(q, lo, hi);
            let kh = g.slice_cols(k, lo, hi);
            let vh = g.slice_cols(v, lo, hi);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let att = g.softmax(scores, causal);
            outs.push(g.matmul(att, vh));
        }
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        }
    }

    fn feed_forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(g, store, &format!("{prefix}.up"), x, true)?;
        let h = g.gelu(h);
        self.linear(g, store, &format!("{prefix}.down"), h, true)
    }

    /// Compresses each `L`-frame window into `N` vectors of model width.
    ///
    /// Each window's frames are projected, tagged with a learned in-window
    /// offset embedding and attended by the learned queries. The final
    /// partial window attends only to the frames it has.
    pub fn window_adapter<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        speech: &FeatureSequence,
    ) -> Result<Var> {
        let a = &self.config.adapter;
        if speech.dim() != a.acoustic_dim {
            return Err(Error::DimensionMismatch(format!(
                "features have dimension {}, adapter expects {}",
                speech.dim(),
                a.acoustic_dim
            )));
        }
        let n = speech.n_frames();
        let frames = g.constant(speech.frames().cast());
        let proj = self.linear(g, store, "adapter.frame_proj", frames, true)?;
        let offsets: Vec<usize> = (0..n).map(|t| t % a.window_size).collect();
        let pos_table = g.param(store, "adapter.window_pos")?;
        let pos = g.gather(pos_table, &offsets);
        let x = g.add(proj, pos);
        let x = self.layer_norm(g, store, "adapter.ln_kv", x)?;
        let wk = g.param(store, "adapter.attn.k.weight")?;
        let wv = g.param(store, "adapter.attn.v.weight")?;
        let keys = g.matmul(x, wk);
        let values = g.matmul(x, wv);
        let queries = g.param(store, "adapter.queries")?;
        let wq = g.param(store, "adapter.attn.q.weight")?;
        let q = g.matmul(queries, wq);

        let mut windows = Vec::with_capacity(n.div_ceil(a.window_size));
        let mut start = 0;
        while start < n {
            let end = (start + a.window_size).min(n);
            let k = g.slice_rows(keys, start, end);
            let v = g.slice_rows(values, start, end);
            windows.push(Self::attend(g, q, k, v, a.num_heads, false));
            start = end;
        }
        let att = g.concat_rows(&windows);
        let att = self.linear(g, store, "adapter.attn.o", att, true)?;
        // Residual on the learned queries, repeated per window.
        let reps: Vec<usize> = (0..windows.len())
            .flat_map(|_| 0..a.queries_per_window)
            .collect();
        let base = g.gather(queries, &reps);
        let h = g.add(base, att);
        let hn = self.layer_norm(g, store, "adapter.ln_ff", h)?;
        let ff = self.feed_forward(g, store, "adapter.ff", hn)?;
        let h = g.add(h, ff);
        self.linear(g, store, "adapter.out_proj", h, true)
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        let vocab = self.config.vocab_size();
        match ids.iter().find(|&&id| id >= vocab) {
            Some(&id) => Err(Error::UnknownToken { id, vocab }),
            None => Ok(()),
        }
    }

    /// Runs the decoder over `[instruction ; source ; response]`.
    ///
    /// `source` is either a precomputed speech-token node or a token id list.
    fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        instruction: &[usize],
        source: Source<'_>,
        response: &[usize],
    ) -> Result<(Var, Vec<Var>, SpanMap)> {
        let c = &self.config;
        self.check_tokens(instruction)?;
        self.check_tokens(response)?;
        let table = g.param(store, "embed.tokens")?;
        let instr = g.gather(table, instruction);
        let src = match source {
            Source::Speech(v) => v,
            Source::Tokens(ids) => {
                self.check_tokens(ids)?;
                g.gather(table, ids)
            }
        };
        let src_len = g.value(src).rows();
        let spans = SpanMap {
            instruction: 0..instruction.len(),
            source: instruction.len()..instruction.len() + src_len,
            response: instruction.len() + src_len..instruction.len() + src_len + response.len(),
        };
        let total = spans.len();
        if total > c.max_positions {
            return Err(Error::InvalidArgument(format!(
                "sequence length {total} exceeds max_positions {}",
                c.max_positions
            )));
        }
        let mut parts = vec![instr, src];
        if !response.is_empty() {
            parts.push(g.gather(table, response));
        }
        let seq = g.concat_rows(&parts);
        let pos_table = g.param(store, "embed.positions")?;
        let positions: Vec<usize> = (0..total).collect();
        let pos = g.gather(pos_table, &positions);
        let mut x = g.add(seq, pos);

        let mut hidden = vec![x];
        for l in 0..c.num_layers {
            let p = format!("blocks.{l}");
            let h = self.layer_norm(g, store, &format!("{p}.ln1"), x)?;
            let q = self.linear(g, store, &format!("{p}.attn.q"), h, false)?;
            let k = self.linear(g, store, &format!("{p}.attn.k"), h, false)?;
            let v = self.linear(g, store, &format!("{p}.attn.v"), h, false)?;
            let att = Self::attend(g, q, k, v, c.num_heads, true);
            let att = self.linear(g, store, &format!("{p}.attn.o"), att, true)?;
            x = g.add(x, att);
            let h = self.layer_norm(g, store, &format!("{p}.ln2"), x)?;
            let ff = self.feed_forward(g, store, &format!("{p}.ff"), h)?;
            x = g.add(x, ff);
            hidden.push(x);
        }
        let h = self.layer_norm(g, store, "final_ln", x)?;
        let logits = self.linear(g, store, "lm_head", h, true)?;
        Ok((logits, hidden, spans))
    }

    /// Teacher-forced forward pass over `[instruction ; source ; response ; eos]`.
    ///
    /// The speech pass uses adapter outputs as the source segment; the text
    /// pass uses transcript token embeddings.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        sample: &PairedSample,
        modality: Modality,
        task: Task,
    ) -> Result<ForwardPass> {
        let mut response = self.response_tokens(sample, task).to_vec();
        response.push(self.config.eos_id());
        let source = match modality {
            Modality::Speech => Source::Speech(self.window_adapter(g, store, &sample.speech)?),
            Modality::Text => Source::Tokens(&sample.transcript),
        };
        let (logits, hidden, spans) = self.decode(g, store, self.instruction(task), source, &response)?;
        Ok(ForwardPass {
            logits,
            hidden,
            spans,
            response,
        })
    }

    /// Checks that `store` holds exactly this model's tensors with matching
    /// shapes, e.g. after loading a checkpoint.
    pub fn check_params(&self, store: &ParameterStore<f32>) -> Result<()> {
        let reference = self.init_params(0);
        if reference.len() != store.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                reference.len(),
                store.len()
            )));
        }
        for p in reference.iter() {
            let found = store
                .get(&p.name)
                .ok_or_else(|| Error::UnknownParameter(p.name.clone()))?;
            if found.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "{}: expected {:?}, found {:?}",
                    p.name,
                    p.value.shape(),
                    found.shape()
                )));
            }
        }
        Ok(())
    }

    /// Greedy decoding from `[instruction ; source]` until `eos` or `max_len`
    /// tokens. The returned tokens exclude `eos`.
    pub fn generate<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        sample: &PairedSample,
        modality: Modality,
        task: Task,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        if max_len == 0 {
            return Ok(out);
        }
        let eos = self.config.eos_id();
        let instruction = self.instruction(task);
        let speech_tokens = match modality {
            Modality::Speech => {
                let mut g = Graph::new();
                let v = self.window_adapter(&mut g, store, &sample.speech)?;
                Some(g.value(v).clone())
            }
            Modality::Text => None,
        };
        let limit = self.config.max_positions;
        while out.len() < max_len {
            let mut g = Graph::new();
            let source = match &speech_tokens {
                Some(m) => Source::Speech(g.constant(m.clone())),
                None => Source::Tokens(&sample.transcript),
            };
            let (logits, _, spans) = self.decode(&mut g, store, instruction, source, &out)?;
            let last = g.value(logits).row(spans.len() - 1);
            let next = argmax(last);
            if next == eos {
                break;
            }
            out.push(next);
            if spans.len() + 1 > limit {
                break;
            }
        }
        Ok(out)
    }
}

enum Source<'a> {
    Speech(Var),
    Tokens(&'a [usize]),
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean next-token negative log-likelihood over response positions only.
pub fn causal_lm_loss<T: Scalar>(g: &mut Graph<T>, pass: &ForwardPass) -> Var {
    let targets = pass.spans.loss_targets(&pass.response);
    g.cross_entropy(pass.logits, &targets)
}

/// Teacher-forced next-token accuracy over response positions:
/// `(correct, total)`.
pub fn token_accuracy<T: Scalar>(g: &Graph<T>, pass: &ForwardPass) -> (usize, usize) {
    let logits = g.value(pass.logits);
    let targets = pass.spans.loss_targets(&pass.response);
    let correct = targets
        .iter()
        .filter(|&&(row, tok)| argmax(logits.row(row)) == tok)
        .count();
    (correct, targets.len())
}
