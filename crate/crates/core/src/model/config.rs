use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Windowed query-attention adapter settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    /// Frames per window (`L`).
    pub window_size: usize,
    /// Learned queries per window (`N`).
    pub queries_per_window: usize,
    /// Acoustic feature width.
    pub acoustic_dim: usize,
    pub num_heads: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            window_size: 17,
            queries_per_window: 1,
            acoustic_dim: 16,
            num_heads: 4,
        }
    }
}

impl AdapterConfig {
    /// `⌈n_frames / L⌉ · N`
    pub fn output_len(&self, n_frames: usize) -> usize {
        n_frames.div_ceil(self.window_size) * self.queries_per_window
    }
}

/// Toy decoder-only speech-text model.
///
/// Token ids `0..content_vocab` are content tokens; the three ids after them
/// are `pad`, `bos` and `eos`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub content_vocab: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub init_std: f64,
    pub adapter: AdapterConfig,
    /// Fixed instruction prefix for speech recognition.
    pub recognition_instruction: Vec<usize>,
    /// Fixed instruction prefix for translation; the text pass reuses it.
    pub translation_instruction: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let content_vocab = 64;
        let bos = content_vocab + 1;
        Self {
            content_vocab,
            model_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ff_dim: 256,
            max_positions: 128,
            init_std: 0.02,
            adapter: AdapterConfig::default(),
            recognition_instruction: vec![bos, 1, 2, 3],
            translation_instruction: vec![bos, 4, 5, 6],
        }
    }
}

impl ModelConfig {
    pub fn vocab_size(&self) -> usize {
        self.content_vocab + 3
    }

    pub fn pad_id(&self) -> usize {
        self.content_vocab
    }

    pub fn bos_id(&self) -> usize {
        self.content_vocab + 1
    }

    pub fn eos_id(&self) -> usize {
        self.content_vocab + 2
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return bad(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.adapter.num_heads == 0 || self.model_dim % self.adapter.num_heads != 0 {
            return bad("adapter.num_heads must divide model_dim".into());
        }
        if self.adapter.window_size == 0 || self.adapter.queries_per_window == 0 {
            return bad("adapter window_size and queries_per_window must be >= 1".into());
        }
        if self.adapter.acoustic_dim == 0 || self.ff_dim == 0 || self.content_vocab == 0 {
            return bad("acoustic_dim, ff_dim and content_vocab must be >= 1".into());
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        for instr in [&self.recognition_instruction, &self.translation_instruction] {
            if instr.is_empty() {
                return bad("instructions must be nonempty".into());
            }
            if let Some(&id) = instr.iter().find(|&&id| id >= self.vocab_size()) {
                return Err(Error::UnknownToken {
                    id,
                    vocab: self.vocab_size(),
                });
            }
        }
        Ok(())
    }
}
