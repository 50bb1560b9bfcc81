use std::path::Path;

use inneralign::data::SynthConfig;
use inneralign::model::ModelConfig;
use inneralign::retrieval::{DEFAULT_QUERIES, DEFAULT_THRESHOLD};
use inneralign::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs, loaded from TOML. Every key is optional; missing
/// keys take the defaults below, unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds corpus synthesis and parameter initialization.
    pub seed: u64,
    /// Number of synthesized samples, held-out splits included.
    pub corpus_size: usize,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    /// Joint-stage settings; its solver also drives retrieval and scoring.
    pub joint: TrainConfig,
    pub selection: SelectionConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// A layer is selected when its MRR is strictly above this.
    pub threshold: f64,
    /// Number of held-out pairs used for retrieval.
    pub queries: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            queries: DEFAULT_QUERIES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Number of held-out pairs for eval, align-score and project.
    pub samples: usize,
    pub max_gen_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            max_gen_len: 24,
        }
    }
}

/// Recognition pretraining uses larger batches and a higher peak rate than
/// the joint stage; at batch 8 the from-scratch model barely learns.
fn pretrain_defaults() -> TrainConfig {
    let mut cfg = TrainConfig {
        batch_size: 32,
        ..TrainConfig::default()
    };
    cfg.schedule.peak = 2e-3;
    cfg.schedule.floor = 2e-4;
    cfg
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_size: 2000,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            pretrain: pretrain_defaults(),
            joint: TrainConfig::default(),
            selection: SelectionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })?;
                Self::parse(&text).map_err(|reason| CliError::Config {
                    path: p.to_path_buf(),
                    reason,
                })?
            }
        };
        cfg.validate().map_err(|e| CliError::Config {
            path: path.map(Path::to_path_buf).unwrap_or_default(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().replace('\n', " "))
    }

    pub fn validate(&self) -> inneralign::Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.joint.validate()?;
        if self.synth.feature_dim != self.model.adapter.acoustic_dim {
            return Err(inneralign::Error::InvalidArgument(format!(
                "synth.feature_dim {} differs from model.adapter.acoustic_dim {}",
                self.synth.feature_dim, self.model.adapter.acoustic_dim
            )));
        }
        if self.synth.vocab_size != self.model.content_vocab {
            return Err(inneralign::Error::InvalidArgument(format!(
                "synth.vocab_size {} differs from model.content_vocab {}",
                self.synth.vocab_size, self.model.content_vocab
            )));
        }
        if self.selection.queries == 0 || self.eval.samples == 0 {
            return Err(inneralign::Error::InvalidArgument(
                "selection.queries and eval.samples must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Writes the fully resolved configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).expect("run config always serializes");
        let path = dir.join("config.toml");
        std::fs::write(&path, text).map_err(|e| inneralign::Error::Io { path, source: e }.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[joint]\nalpah = 0.5").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 7;
        c.joint.alpha = 0.9;
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn mismatched_dims_fail_validation() {
        let mut c = RunConfig::default();
        c.synth.feature_dim = 8;
        assert!(c.validate().is_err());
    }
}
