use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{read_feature_file, write_feature_file, FeatureSequence};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One paired record: speech features with their transcript and the target
/// ("translation") token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub speech: FeatureSequence,
    pub transcript: Vec<usize>,
    pub target: Vec<usize>,
}

impl PairedSample {
    pub fn new(id: String, speech: FeatureSequence, transcript: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        if transcript.is_empty() || target.is_empty() {
            return Err(Error::Empty(format!("sample {id}: transcript and target must be nonempty")));
        }
        Ok(Self {
            id,
            speech,
            transcript,
            target,
        })
    }

    /// The same sample posed as speech recognition: the transcript becomes
    /// the response.
    pub fn as_recognition(&self) -> Self {
        Self {
            target: self.transcript.clone(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn manifest_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Valid => "valid.tsv",
            Split::Test => "test.tsv",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub transcript: Vec<usize>,
    pub target: Vec<usize>,
}

/// Tab-separated manifest: `id  path  transcript-ids  target-ids`, ids
/// space-separated, one record per line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusManifest {
    pub split: Split,
    pub records: Vec<ManifestRecord>,
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(field: &str, origin: &Path, line: usize) -> Result<Vec<usize>> {
    field
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::format(origin, format!("line {line}: bad token id `{t}`")))
        })
        .collect()
}

impl CorpusManifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                r.path.display(),
                join_ids(&r.transcript),
                join_ids(&r.target)
            ));
        }
        out
    }

    pub fn parse(text: &str, split: Split, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::format(
                    origin,
                    format!("line {line_no}: expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let id = fields[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::format(origin, format!("line {line_no}: duplicate id `{id}`")));
            }
            let transcript = parse_ids(fields[2], origin, line_no)?;
            let target = parse_ids(fields[3], origin, line_no)?;
            if transcript.is_empty() || target.is_empty() {
                return Err(Error::format(
                    origin,
                    format!("line {line_no}: transcript and target must be nonempty"),
                ));
            }
            records.push(ManifestRecord {
                id,
                path: PathBuf::from(fields[1]),
                transcript,
                target,
            });
        }
        Ok(Self { split, records })
    }

    pub fn read(path: &Path, split: Split) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, split, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Reads every referenced feature file. Loading order does not affect the
    /// result.
    pub fn load(&self, base: &Path) -> Result<Vec<PairedSample>> {
        self.records
            .par_iter()
            .map(|r| {
                let path = base.join(&r.path);
                let frames = read_feature_file(&path)?;
                let speech = FeatureSequence::new(frames).map_err(|e| Error::format(&path, e.to_string()))?;
                PairedSample::new(r.id.clone(), speech, r.transcript.clone(), r.target.clone())
            })
            .collect()
    }
}

/// Reads `<dir>/<split>.tsv` and its feature files.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<PairedSample>> {
    CorpusManifest::read(&dir.join(split.manifest_name()), split)?.load(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of content tokens.
    pub vocab_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub valid_size: usize,
    pub test_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            min_tokens: 4,
            max_tokens: 16,
            min_frames_per_token: 2,
            max_frames_per_token: 6,
            feature_dim: 16,
            noise: 0.1,
            valid_size: 200,
            test_size: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("token length range must satisfy 1 <= min_tokens <= max_tokens");
        }
        if self.min_frames_per_token == 0 || self.min_frames_per_token > self.max_frames_per_token {
            return bad("frames-per-token range must satisfy 1 <= min <= max");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be finite and >= 0");
        }
        Ok(())
    }
}

/// In-memory synthetic corpus together with its generating tables.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub samples: Vec<PairedSample>,
    /// `vocab_size × feature_dim`, one acoustic prototype per token.
    pub prototypes: Matrix<f32>,
    /// `translation[t]` is the target token for transcript token `t`.
    pub translation: Vec<usize>,
}

impl SyntheticCorpus {
    /// Split boundaries: the last `valid_size + test_size` samples are held out.
    pub fn split(&self, cfg: &SynthConfig, split: Split) -> &[PairedSample] {
        let n = self.samples.len();
        let held = (cfg.valid_size + cfg.test_size).min(n);
        let train_end = n - held;
        let valid_end = (train_end + cfg.valid_size).min(n);
        match split {
            Split::Train => &self.samples[..train_end],
            Split::Valid => &self.samples[train_end..valid_end],
            Split::Test => &self.samples[valid_end..],
        }
    }
}

/// Generates `size` samples deterministically from `seed`.
///
/// Transcripts are uniform random tokens; targets map each transcript token
/// through a fixed random permutation of the vocabulary; each transcript
/// token contributes `k ∈ [min, max]` frames equal to its prototype plus
/// Gaussian noise.
pub fn synthesize(seed: u64, size: usize, cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f64, 1.0).expect("valid normal");
    let proto: Vec<f32> = (0..cfg.vocab_size * cfg.feature_dim)
        .map(|_| unit.sample(&mut rng) as f32)
        .collect();
    let prototypes = Matrix::from_vec(cfg.vocab_size, cfg.feature_dim, proto);
    let mut translation: Vec<usize> = (0..cfg.vocab_size).collect();
    translation.shuffle(&mut rng);

    let width = size.max(1).to_string().len();
    let mut samples = Vec::with_capacity(size);
    for s in 0..size {
        let len = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
        let transcript: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        let target = transcript.iter().map(|&t| translation[t]).collect();
        let mut data = Vec::new();
        let mut frames = 0;
        for &tok in &transcript {
            let k = rng.gen_range(cfg.min_frames_per_token..=cfg.max_frames_per_token);
            for _ in 0..k {
                for &p in prototypes.row(tok) {
                    let noise = if cfg.noise > 0.0 {
                        (cfg.noise * unit.sample(&mut rng)) as f32
                    } else {
                        0.0
                    };
                    data.push(p + noise);
                }
                frames += 1;
            }
        }
        let speech = FeatureSequence::new(Matrix::from_vec(frames, cfg.feature_dim, data))?;
        samples.push(PairedSample::new(
            format!("utt{s:0width$}"),
            speech,
            transcript,
            target,
        )?);
    }
    Ok(SyntheticCorpus {
        samples,
        prototypes,
        translation,
    })
}

/// Writes a synthetic corpus under `out`: one feature file per sample in
/// `out/features/` and one manifest per split.
pub fn synthesize_corpus(seed: u64, size: usize, cfg: &SynthConfig, out: &Path) -> Result<Vec<CorpusManifest>> {
    let corpus = synthesize(seed, size, cfg)?;
    let feat_dir = out.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let mut records = Vec::new();
        for s in corpus.split(cfg, split) {
            let rel = PathBuf::from("features").join(format!("{}.mbft", s.id));
            write_feature_file(&out.join(&rel), s.speech.frames())?;
            records.push(ManifestRecord {
                id: s.id.clone(),
                path: rel,
                transcript: s.transcript.clone(),
                target: s.target.clone(),
            });
        }
        let manifest = CorpusManifest { split, records };
        manifest.write(&out.join(split.manifest_name()))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}
