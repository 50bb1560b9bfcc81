mod common;

use std::collections::BTreeMap;

use common::{rel_err, tiny_model_config, tiny_samples};
use inneralign::diagnostics::{
    alignment_score, generation_metrics, pca_2d, pooled_representation, projection, read_generations,
    score_from_distances, write_generations, write_projection, zero_shot_text_eval, GenerationRecord,
};
use inneralign::model::{Model, Task};
use inneralign::numerics::Matrix;
use inneralign::ot::{wasserstein_distance, SolverConfig};
use inneralign::retrieval::collect_span_states;

#[test]
fn alignment_score_matches_a_manual_average() {
    let model = Model::new(tiny_model_config()).unwrap();
    let params = model.init_params(1);
    let samples = tiny_samples(41, 5);
    let solver = SolverConfig::exact();
    let layers = [0, 2];
    let score = alignment_score(&model, &params, &samples, &layers, &solver).unwrap();
    let states = collect_span_states(&model, &params, &samples, Task::Translation).unwrap();
    let mut means = Vec::new();
    for &l in &layers {
        let (hs, ht) = states.layer(l).unwrap();
        let sum: f64 = hs.iter().zip(&ht).map(|(s, t)| wasserstein_distance(s, t, &solver).unwrap()).sum();
        let mean = sum / samples.len() as f64;
        assert!(rel_err(score.per_layer[&l], mean) <= 1e-12);
        means.push(mean);
    }
    let overall = means.iter().sum::<f64>() / means.len() as f64;
    assert!(rel_err(score.log_score, overall.ln()) <= 1e-12);
    assert!(!score.degenerate);
    assert_eq!(score.samples, 5);
}

#[test]
fn alignment_score_ignores_sample_order() {
    let model = Model::new(tiny_model_config()).unwrap();
    let params = model.init_params(2);
    let samples = tiny_samples(42, 6);
    let mut shuffled = samples.clone();
    shuffled.reverse();
    shuffled.swap(0, 3);
    let solver = SolverConfig::default();
    let a = alignment_score(&model, &params, &samples, &[0, 1], &solver).unwrap();
    let b = alignment_score(&model, &params, &shuffled, &[0, 1], &solver).unwrap();
    for l in [0, 1] {
        assert!(rel_err(a.per_layer[&l], b.per_layer[&l]) <= 1e-12);
    }
}

#[test]
fn zero_distance_is_flagged_as_degenerate() {
    let per_layer = BTreeMap::from([(0, vec![0.0, 0.0])]);
    let s = score_from_distances(&per_layer).unwrap();
    assert!(s.degenerate);
    assert_eq!(s.log_score, f64::NEG_INFINITY);
    assert!(score_from_distances(&BTreeMap::new()).is_err());
    assert!(score_from_distances(&BTreeMap::from([(0, vec![1.0]), (1, vec![1.0, 2.0])])).is_err());
}

#[test]
fn pooling_is_the_row_mean() {
    let m = Matrix::from_rows(&[vec![1.0f32, 2.0], vec![3.0, 6.0]]);
    assert_eq!(pooled_representation(&m).unwrap(), vec![2.0, 4.0]);
    assert!(pooled_representation(&Matrix::<f32>::zeros(0, 2)).is_err());
}

fn cloud() -> Vec<Vec<f64>> {
    (0..12)
        .map(|i| {
            let t = i as f64;
            vec![3.0 * t, 0.5 * (t * 1.7).sin(), 0.1 * (t * 0.3).cos()]
        })
        .collect()
}

#[test]
fn projection_is_invariant_under_translation() {
    let base = pca_2d(&cloud()).unwrap().unwrap();
    let moved: Vec<Vec<f64>> = cloud().iter().map(|v| vec![v[0] + 5.0, v[1] - 2.0, v[2] + 9.0]).collect();
    let shifted = pca_2d(&moved).unwrap().unwrap();
    for (a, b) in base.iter().zip(&shifted) {
        assert!((a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9);
    }
}

#[test]
fn projection_axes_are_centered_ordered_and_uncorrelated() {
    let coords = pca_2d(&cloud()).unwrap().unwrap();
    let n = coords.len() as f64;
    let mx = coords.iter().map(|c| c[0]).sum::<f64>() / n;
    let my = coords.iter().map(|c| c[1]).sum::<f64>() / n;
    assert!(mx.abs() <= 1e-9 && my.abs() <= 1e-9);
    let vx = coords.iter().map(|c| c[0] * c[0]).sum::<f64>();
    let vy = coords.iter().map(|c| c[1] * c[1]).sum::<f64>();
    let cxy = coords.iter().map(|c| c[0] * c[1]).sum::<f64>();
    assert!(vx >= vy);
    assert!(cxy.abs() <= 1e-9 * vx);
    // The dominant direction is the first feature, oriented positively.
    let centered_first: Vec<f64> = cloud().iter().map(|v| v[0] - 16.5).collect();
    for (c, x) in coords.iter().zip(&centered_first) {
        assert!((c[0] - x).abs() <= 0.05 * x.abs().max(1.0));
    }
}

#[test]
fn rank_deficient_sets_are_not_projected() {
    let line: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    assert!(pca_2d(&line).unwrap().is_none());
    assert!(pca_2d(&vec![vec![1.0, 1.0]; 4]).unwrap().is_none());
    assert!(pca_2d(&[]).is_err());
}

#[test]
fn projection_export_writes_every_point() {
    let model = Model::new(tiny_model_config()).unwrap();
    let params = model.init_params(3);
    let samples = tiny_samples(43, 4);
    let export = projection(&model, &params, &samples, 1).unwrap();
    assert_eq!(export.ids.len(), 8);
    assert!(export.coords.is_some());
    let dir = tempfile::tempdir().unwrap();
    write_projection(&export, dir.path()).unwrap();
    let tsv = std::fs::read_to_string(dir.path().join("projection.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 8);
    assert_eq!(tsv.lines().filter(|l| l.contains("\tspeech\t")).count(), 4);
    assert!(dir.path().join("pooled_speech.mbft").exists());
    assert!(dir.path().join("pooled_text.mbft").exists());
    assert!(projection(&model, &params, &samples[..1], 0).is_err());
    assert!(projection(&model, &params, &samples, 9).is_err());
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
            generated: vec![4, 9],
            reference: vec![4, 5, 6],
        },
    ];
    let m = generation_metrics(&records).unwrap();
    assert_eq!(m.exact_match, 0.5);
    assert_eq!(m.token_acc, 4.0 / 6.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("generations.jsonl");
    write_generations(&path, &records).unwrap();
    assert_eq!(read_generations(&path).unwrap(), records);
    assert!(generation_metrics(&[]).is_err());
}

#[test]
fn untrained_zero_shot_translation_is_near_chance() {
    let model = Model::new(tiny_model_config()).unwrap();
    let params = model.init_params(4);
    let samples = tiny_samples(44, 20);
    let (m, records) = zero_shot_text_eval(&model, &params, &samples, 8).unwrap();
    assert_eq!(records.len(), 20);
    assert_eq!(m.samples, 20);
    assert!(m.exact_match <= 0.1, "{}", m.exact_match);
    assert!(m.token_acc <= 0.3, "{}", m.token_acc);
}
