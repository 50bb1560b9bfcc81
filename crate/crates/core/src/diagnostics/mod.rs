//! Modality-gap measurements: pooled span vectors, log-Wasserstein
//! alignment scores, PCA projection export and the zero-shot text probe.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_feature_file, PairedSample};
use crate::error::{Error, Result};
use crate::model::{Modality, Model, Task};
use crate::numerics::{Matrix, ParameterStore, Scalar};
use crate::ot::{wasserstein_distance, SolverConfig};
use crate::retrieval::collect_span_states;

/// Mean over the rows of one span.
pub fn pooled_representation<T: Scalar>(span: &Matrix<T>) -> Result<Vec<f64>> {
    if span.rows() == 0 || span.cols() == 0 {
        return Err(Error::Empty("span to pool".into()));
    }
    let mut out = vec![0.0; span.cols()];
    for r in 0..span.rows() {
        for (o, v) in out.iter_mut().zip(span.row(r)) {
            *o += v.to_f64_lossy();
        }
    }
    let n = span.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    /// Mean per-sample Wasserstein distance, per layer.
    pub per_layer: BTreeMap<usize, f64>,
    /// `ln` of the mean of `per_layer`; negative infinity when that mean is 0.
    pub log_score: f64,
    /// Set when the mean distance is exactly zero and the log is undefined.
    pub degenerate: bool,
    pub samples: usize,
}

/// Builds the score from per-layer lists of per-sample distances.
pub fn score_from_distances(per_layer: &BTreeMap<usize, Vec<f64>>) -> Result<AlignmentScore> {
    if per_layer.is_empty() {
        return Err(Error::Empty("alignment layers".into()));
    }
    let samples = per_layer.values().next().map_or(0, Vec::len);
    if samples == 0 || per_layer.values().any(|v| v.len() != samples) {
        return Err(Error::Shape("every layer needs the same nonzero number of samples".into()));
    }
    let means: BTreeMap<usize, f64> = per_layer
        .iter()
        .map(|(&l, v)| (l, v.iter().sum::<f64>() / samples as f64))
        .collect();
    let overall = means.values().sum::<f64>() / means.len() as f64;
    let degenerate = overall <= 0.0;
    Ok(AlignmentScore {
        per_layer: means,
        log_score: if degenerate { f64::NEG_INFINITY } else { overall.ln() },
        degenerate,
        samples,
    })
}

/// Per-layer mean Wasserstein between speech and transcript spans over
/// `samples`, and its log.
pub fn alignment_score(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    layers: &[usize],
    solver: &SolverConfig,
) -> Result<AlignmentScore> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    if let Some(&layer) = layers.iter().find(|&&l| l > model.config.num_layers) {
        return Err(Error::LayerOutOfRange {
            layer,
            num_layers: model.config.num_layers,
        });
    }
    let states = collect_span_states(model, store, samples, Task::Translation)?;
    let mut per_layer = BTreeMap::new();
    for &l in layers {
        let (hs, ht) = states.layer(l)?;
        let d: Vec<f64> = hs
            .par_iter()
            .zip(ht.par_iter())
            .map(|(s, t)| wasserstein_distance(s, t, solver))
            .collect::<Result<_>>()?;
        per_layer.insert(l, d);
    }
    score_from_distances(&per_layer)
}

/// Top-two principal component coordinates of `vectors` after centering.
/// Returns `None` when the centered data has rank below two.
///
/// Each axis is oriented so that its largest-magnitude loading is positive.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Option<Vec<[f64; 2]>>> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::Empty("vectors to project".into()));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch("vectors differ in length".into()));
    }
    if d < 2 {
        return Ok(None);
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let second = eig.eigenvalues[order[1]];
    if !(top > 0.0) || second <= top * 1e-12 {
        return Ok(None);
    }
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&k| {
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if lead < 0.0 {
                col.iter().map(|v| -v).collect()
            } else {
                col
            }
        })
        .collect();
    Ok(Some(
        (0..n)
            .map(|i| {
                let row = centered.row(i);
                let dot = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                [dot(&axes[0]), dot(&axes[1])]
            })
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionExport {
    /// Sample ids, speech rows first, then text rows.
    pub ids: Vec<String>,
    pub modalities: Vec<Modality>,
    pub pooled: Vec<Vec<f64>>,
    /// `None` when the pooled set was rank deficient.
    pub coords: Option<Vec<[f64; 2]>>,
}

impl ProjectionExport {
    pub fn warning(&self) -> Option<&'static str> {
        self.coords
            .is_none()
            .then_some("pooled vectors are rank deficient; exported raw vectors only")
    }
}

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Speech => "speech",
        Modality::Text => "text",
    }
}

/// Pools the speech and transcript spans of each sample at `layer` and
/// projects the joint set onto its top two principal components.
pub fn projection(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    layer: usize,
) -> Result<ProjectionExport> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("projection needs at least 2 samples per modality".into()));
    }
    if layer > model.config.num_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            num_layers: model.config.num_layers,
        });
    }
    let states = collect_span_states(model, store, samples, Task::Translation)?;
    let mut ids = Vec::new();
    let mut modalities = Vec::new();
    let mut pooled = Vec::new();
    for (m, list) in [(Modality::Speech, &states.speech), (Modality::Text, &states.text)] {
        for (s, h) in samples.iter().zip(list) {
            ids.push(s.id.clone());
            modalities.push(m);
            pooled.push(pooled_representation(&h.layers[layer])?);
        }
    }
    let coords = pca_2d(&pooled)?;
    Ok(ProjectionExport {
        ids,
        modalities,
        pooled,
        coords,
    })
}

/// Writes `projection.tsv` (id, modality, x, y) when coordinates exist, and
/// the pooled vectors as `pooled_speech.mbft` / `pooled_text.mbft`.
pub fn write_projection(export: &ProjectionExport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for m in [Modality::Speech, Modality::Text] {
        let rows: Vec<Vec<f32>> = export
            .modalities
            .iter()
            .zip(&export.pooled)
            .filter(|(mm, _)| **mm == m)
            .map(|(_, v)| v.iter().map(|&x| x as f32).collect())
            .collect();
        let path = out_dir.join(format!("pooled_{}.mbft", modality_name(m)));
        write_feature_file(&path, &Matrix::from_rows(&rows))?;
    }
    if let Some(coords) = &export.coords {
        let path = out_dir.join("projection.tsv");
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for ((id, m), [x, y]) in export.ids.iter().zip(&export.modalities).zip(coords) {
            writeln!(f, "{id}\t{}\t{x}\t{y}", modality_name(*m)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// One greedy generation with its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub generated: Vec<usize>,
    pub reference: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    /// Position-wise matches divided by total reference length.
    pub token_acc: f64,
    pub exact_match: f64,
    pub samples: usize,
}

/// Metrics computed from generation records alone, so a dump can be
/// rescored without the model.
pub fn generation_metrics(records: &[GenerationRecord]) -> Result<GenerationMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("generation records".into()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut exact = 0usize;
    for r in records {
        correct += r.generated.iter().zip(&r.reference).filter(|(a, b)| a == b).count();
        total += r.reference.len();
        exact += usize::from(r.generated == r.reference);
    }
    Ok(GenerationMetrics {
        token_acc: correct as f64 / total.max(1) as f64,
        exact_match: exact as f64 / records.len() as f64,
        samples: records.len(),
    })
}

/// Greedy generations for `samples` under the given modality and task.
pub fn generate_all(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    modality: Modality,
    task: Task,
    max_len: usize,
) -> Result<Vec<GenerationRecord>> {
    samples
        .par_iter()
        .map(|s| {
            Ok(GenerationRecord {
                id: s.id.clone(),
                generated: model.generate(store, s, modality, task, max_len)?,
                reference: model.response_tokens(s, task).to_vec(),
            })
        })
        .collect()
}

/// Feeds the transcript through the text path with the translation prompt
/// used in speech training and scores the generated targets.
pub fn zero_shot_text_eval(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    max_len: usize,
) -> Result<(GenerationMetrics, Vec<GenerationRecord>)> {
    let records = generate_all(model, store, samples, Modality::Text, Task::Translation, max_len)?;
    Ok((generation_metrics(&records)?, records))
}

pub fn write_generations(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("generation records always serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        let one = Matrix::from_rows(&[vec![1.5f64, -2.0]]);
        assert_eq!(pooled_representation(&one).unwrap(), vec![1.5, -2.0]);
        let sym = Matrix::from_rows(&[vec![1.0f64, -3.0], vec![-1.0, 3.0]]);
        assert_eq!(pooled_representation(&sym).unwrap(), vec![0.0, 0.0]);
        let m = Matrix::from_rows(&[vec![1.0f64, 3.0], vec![3.0, 5.0]]);
        assert_eq!(pooled_representation(&m).unwrap(), vec![2.0, 4.0]);
        assert!(pooled_representation(&Matrix::<f64>::zeros(0, 2)).is_err());
    }

    #[test]
    fn score_of_single_distance_is_its_log() {
        let s = score_from_distances(&BTreeMap::from([(0, vec![2.5])])).unwrap();
        assert_eq!(s.log_score, 2.5f64.ln());
        assert!(!s.degenerate);
    }

    #[test]
    fn zero_distance_is_flagged() {
        let s = score_from_distances(&BTreeMap::from([(0, vec![0.0, 0.0]), (1, vec![0.0, 0.0])])).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.log_score, f64::NEG_INFINITY);
    }

    #[test]
    fn score_averages_layers_then_logs() {
        let s = score_from_distances(&BTreeMap::from([(0, vec![1.0, 3.0]), (2, vec![4.0, 8.0])])).unwrap();
        assert_eq!(s.per_layer[&0], 2.0);
        assert_eq!(s.per_layer[&2], 6.0);
        assert!((s.log_score - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pca_of_planar_data_is_a_rigid_motion() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![4.0, 0.5], vec![1.0, 3.0]];
        let c = pca_2d(&pts).unwrap().unwrap();
        // Pairwise distances are preserved.
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0 = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let d1 = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        let var = |k: usize| c.iter().map(|p| p[k] * p[k]).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn duplicates_get_identical_coordinates() {
        let pts = vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0], vec![3.0, 2.0, 0.5]];
        let doubled: Vec<_> = pts.iter().chain(&pts).cloned().collect();
        let c = pca_2d(&doubled).unwrap().unwrap();
        for i in 0..pts.len() {
            assert_eq!(c[i], c[i + pts.len()]);
        }
    }

    #[test]
    fn collinear_points_are_rank_deficient() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(pca_2d(&pts).unwrap(), None);
    }

    #[test]
    fn generation_metrics_from_records() {
        let records = vec![
            GenerationRecord {
                id: "a".into(),
                generated: vec![1, 2, 3],
                reference: vec![1, 2, 3],
            },
            GenerationRecord {
                id: "b".into(),
                generated: vec![1, 9],
                reference: vec![1, 2, 3],
            },
        ];
        let m = generation_metrics(&records).unwrap();
        assert_eq!(m.exact_match, 0.5);
        assert_eq!(m.token_acc, 4.0 / 6.0);
    }
}
