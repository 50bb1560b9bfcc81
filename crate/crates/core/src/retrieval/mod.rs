//! Speech-to-text retrieval per layer, mean reciprocal rank, and thresholded
//! layer selection.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::model::{HiddenStates, Modality, Model, Task};
use crate::numerics::{Graph, ParameterStore};
use crate::ot::{wasserstein_distance, RepresentationSet, SolverConfig};

/// Selection threshold used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 0.05;
/// Number of retrieval pairs used when none is configured.
pub const DEFAULT_QUERIES: usize = 200;

/// `Q × Q` matrix of speech-to-text distances for one layer; row `i` is the
/// speech query, column `j` the text candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    q: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(q: usize, data: Vec<f64>) -> Result<Self> {
        if q == 0 {
            return Err(Error::Empty("distance matrix".into()));
        }
        if data.len() != q * q {
            return Err(Error::Shape(format!("{} entries for a {q}x{q} distance matrix", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!("distance entries must be finite and >= 0, got {v}")));
        }
        Ok(Self { q, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.len(), rows.concat())
    }

    pub fn len(&self) -> usize {
        self.q
    }

    pub fn is_empty(&self) -> bool {
        self.q == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.q + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }
}

/// All `Q²` Wasserstein distances between speech spans and text spans.
/// Rows are solved in parallel and assembled in index order.
pub fn pairwise_distance_matrix(
    speech: &[RepresentationSet],
    text: &[RepresentationSet],
    solver: &SolverConfig,
) -> Result<DistanceMatrix> {
    if speech.is_empty() {
        return Err(Error::Empty("retrieval set".into()));
    }
    if speech.len() != text.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} speech queries vs {} text candidates",
            speech.len(),
            text.len()
        )));
    }
    let rows: Vec<Vec<f64>> = speech
        .par_iter()
        .map(|hs| text.iter().map(|ht| wasserstein_distance(hs, ht, solver)).collect())
        .collect::<Result<_>>()?;
    DistanceMatrix::from_rows(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub mrr: f64,
    pub q: usize,
    /// 1-based rank of the golden candidate for each query.
    pub ranks: Vec<usize>,
}

/// Rank of the diagonal entry in each row, counting only strictly smaller
/// competitors (the golden candidate wins ties), and their mean reciprocal.
pub fn mrr(matrix: &DistanceMatrix) -> RetrievalReport {
    let ranks: Vec<usize> = (0..matrix.len())
        .map(|i| {
            let row = matrix.row(i);
            let golden = row[i];
            1 + row.iter().filter(|&&v| v < golden).count()
        })
        .collect();
    let sum: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum();
    RetrievalReport {
        mrr: sum / ranks.len() as f64,
        q: ranks.len(),
        ranks,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub selected: Vec<usize>,
    pub threshold: f64,
    /// Highest layer index considered (layers run `0..=num_layers`).
    pub num_layers: usize,
}

impl LayerSelection {
    /// Set when no layer clears the threshold; joint training then reduces
    /// to cross-entropy only.
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Layers whose MRR strictly exceeds `threshold`. `mrr_per_layer[l]` is the
/// score of layer `l`.
pub fn select_layers(mrr_per_layer: &[f64], threshold: f64) -> Result<LayerSelection> {
    if mrr_per_layer.is_empty() {
        return Err(Error::Empty("per-layer retrieval scores".into()));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be finite, got {threshold}")));
    }
    Ok(LayerSelection {
        selected: mrr_per_layer
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > threshold)
            .map(|(l, _)| l)
            .collect(),
        threshold,
        num_layers: mrr_per_layer.len() - 1,
    })
}

/// Source-span states of the speech and text passes for each sample.
pub struct SpanStates {
    pub speech: Vec<HiddenStates<f32>>,
    pub text: Vec<HiddenStates<f32>>,
}

impl SpanStates {
    pub fn layer(&self, layer: usize) -> Result<(Vec<RepresentationSet>, Vec<RepresentationSet>)> {
        let pick = |states: &[HiddenStates<f32>]| -> Result<Vec<RepresentationSet>> {
            states
                .iter()
                .map(|h| RepresentationSet::from_matrix(&h.layers[layer]))
                .collect()
        };
        Ok((pick(&self.speech)?, pick(&self.text)?))
    }
}

/// Runs both passes for each sample with the `task` prompt and keeps only
/// the speech-token span and the transcript-token span at every layer.
pub fn collect_span_states(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    task: Task,
) -> Result<SpanStates> {
    let pairs: Vec<(HiddenStates<f32>, HiddenStates<f32>)> = samples
        .par_iter()
        .map(|s| {
            let run = |modality| -> Result<HiddenStates<f32>> {
                let mut g = Graph::new();
                let pass = model.forward(&mut g, store, s, modality, task)?;
                let all = HiddenStates::from_pass(&g, &pass);
                Ok(HiddenStates {
                    layers: (0..all.layers.len()).map(|l| all.span(l, &pass.spans.source)).collect(),
                })
            };
            Ok((run(Modality::Speech)?, run(Modality::Text)?))
        })
        .collect::<Result<_>>()?;
    let (speech, text) = pairs.into_iter().unzip();
    Ok(SpanStates { speech, text })
}

/// One retrieval report per layer `0..=num_layers`.
pub fn layer_retrieval(
    model: &Model,
    store: &ParameterStore<f32>,
    samples: &[PairedSample],
    task: Task,
    solver: &SolverConfig,
) -> Result<Vec<RetrievalReport>> {
    if samples.is_empty() {
        return Err(Error::Empty("retrieval set".into()));
    }
    let states = collect_span_states(model, store, samples, task)?;
    (0..=model.config.num_layers)
        .map(|l| {
            let (hs, ht) = states.layer(l)?;
            Ok(mrr(&pairwise_distance_matrix(&hs, &ht, solver)?))
        })
        .collect()
}

/// One line of the selection report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub mrr: f64,
    pub selected: bool,
    pub q: usize,
    pub threshold: f64,
}

pub fn layer_records(reports: &[RetrievalReport], selection: &LayerSelection) -> Vec<LayerRecord> {
    reports
        .iter()
        .enumerate()
        .map(|(layer, r)| LayerRecord {
            layer,
            mrr: r.mrr,
            selected: selection.selected.contains(&layer),
            q: r.q,
            threshold: selection.threshold,
        })
        .collect()
}

pub fn write_selection_report(path: &Path, records: &[LayerRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("layer records always serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a report written by [`write_selection_report`] back into the
/// selection it encodes.
pub fn read_selection_report(path: &Path) -> Result<(Vec<LayerRecord>, LayerSelection)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<LayerRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect::<Result<_>>()?;
    if records.is_empty() {
        return Err(Error::format(path, "no layer records"));
    }
    for (i, r) in records.iter().enumerate() {
        if r.layer != i {
            return Err(Error::format(path, format!("record {i} has layer {}", r.layer)));
        }
    }
    let selection = LayerSelection {
        selected: records.iter().filter(|r| r.selected).map(|r| r.layer).collect(),
        threshold: records[0].threshold,
        num_layers: records.len() - 1,
    };
    Ok((records, selection))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_three_by_three() {
        let d = DistanceMatrix::from_rows(&[
            vec![0.5, 0.1, 0.9],
            vec![0.4, 0.2, 0.8],
            vec![0.7, 0.6, 0.3],
        ])
        .unwrap();
        let r = mrr(&d);
        assert_eq!(r.ranks, vec![2, 1, 1]);
        assert_eq!(r.mrr, (0.5 + 1.0 + 1.0) / 3.0);
    }

    #[test]
    fn diagonal_minimum_gives_one() {
        let d = DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.5]]).unwrap();
        assert_eq!(mrr(&d).mrr, 1.0);
    }

    #[test]
    fn golden_wins_ties() {
        let d = DistanceMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(mrr(&d).ranks, vec![1, 1]);
    }

    #[test]
    fn single_query() {
        let d = DistanceMatrix::new(1, vec![3.0]).unwrap();
        assert_eq!(mrr(&d).mrr, 1.0);
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        assert!(DistanceMatrix::new(0, vec![]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0; 3]).is_err());
        assert!(DistanceMatrix::new(1, vec![-1.0]).is_err());
        assert!(DistanceMatrix::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn selection_is_strict() {
        let s = select_layers(&[0.9, 0.6, 0.04, 0.01], 0.05).unwrap();
        assert_eq!(s.selected, vec![0, 1]);
        assert_eq!(s.num_layers, 3);
        let s = select_layers(&[0.05, 0.050001], 0.05).unwrap();
        assert_eq!(s.selected, vec![1]);
        let s = select_layers(&[1.0, 0.5], 1.0).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn report_round_trip() {
        let reports = vec![
            RetrievalReport {
                mrr: 0.9,
                q: 2,
                ranks: vec![1, 1],
            },
            RetrievalReport {
                mrr: 0.01,
                q: 2,
                ranks: vec![2, 2],
            },
        ];
        let sel = select_layers(&[0.9, 0.01], 0.05).unwrap();
        let dir = std::env::temp_dir().join(format!("inneralign-sel-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("selection.jsonl");
        write_selection_report(&path, &layer_records(&reports, &sel)).unwrap();
        let (records, back) = read_selection_report(&path).unwrap();
        assert_eq!(back, sel);
        assert_eq!(records.len(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
