//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance target.
#![allow(dead_code)]

use std::collections::HashMap;

pub mod gradcheck;

use inneralign::data::{synthesize, PairedSample, SynthConfig};
use inneralign::model::{AdapterConfig, ModelConfig};
use inneralign::numerics::Matrix;
use inneralign::ot::{CostMatrix, RepresentationSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> RepresentationSet {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    RepresentationSet::from_rows(&rows).unwrap()
}

/// A random pair of point sets with `1 <= n, m <= max`, `1 <= d <= max_d`.
/// With `square` the sizes are equal; otherwise they differ.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max: usize,
    max_d: usize,
    square: bool,
) -> (RepresentationSet, RepresentationSet) {
    let n = rng.gen_range(1..=max);
    let m = if square {
        n
    } else {
        loop {
            let m = rng.gen_range(1..=max);
            if m != n {
                break m;
            }
        }
    };
    let d = rng.gen_range(1..=max_d);
    (random_set(rng, n, d), random_set(rng, m, d))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Square instances: with uniform marginals an optimal plan is a scaled
/// permutation (Birkhoff), so the optimum is the best of all `n!`.
pub fn permutation_oracle(cost: &CostMatrix) -> f64 {
    let n = cost.rows();
    assert_eq!(n, cost.cols());
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rectangular instances: scale masses to `K = lcm(n, m)` integer units
/// (row `i` supplies `K/n`, column `j` takes `K/m`). The transportation
/// polytope with integer margins has integer vertices, so the optimum is a
/// min-cost assignment of units, found by exhaustive DP over how many
/// units each column has received.
pub fn unit_assignment_oracle(cost: &CostMatrix) -> f64 {
    let (n, m) = (cost.rows(), cost.cols());
    let k = n / gcd(n, m) * m;
    let (per_row, per_col) = (k / n, k / m);
    let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
    fn go(
        used: &mut Vec<usize>,
        assigned: usize,
        k: usize,
        per_row: usize,
        per_col: usize,
        cost: &CostMatrix,
        memo: &mut HashMap<Vec<usize>, f64>,
    ) -> f64 {
        if assigned == k {
            return 0.0;
        }
        if let Some(&v) = memo.get(used) {
            return v;
        }
        let row = assigned / per_row;
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if used[j] < per_col {
                used[j] += 1;
                let v = cost.get(row, j) + go(used, assigned + 1, k, per_row, per_col, cost, memo);
                used[j] -= 1;
                best = best.min(v);
            }
        }
        memo.insert(used.clone(), best);
        best
    }
    let mut used = vec![0; m];
    go(&mut used, 0, k, per_row, per_col, cost, &mut memo) / k as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Small model whose spans keep `n·m` within the exact solver's range.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        content_vocab: 12,
        model_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ff_dim: 16,
        max_positions: 40,
        init_std: 0.3,
        adapter: AdapterConfig {
            window_size: 4,
            queries_per_window: 1,
            acoustic_dim: 4,
            num_heads: 2,
        },
        recognition_instruction: vec![13, 1, 2],
        translation_instruction: vec![13, 3, 4],
    }
}

pub fn tiny_synth_config() -> SynthConfig {
    SynthConfig {
        vocab_size: 12,
        min_tokens: 2,
        max_tokens: 4,
        min_frames_per_token: 1,
        max_frames_per_token: 3,
        feature_dim: 4,
        noise: 0.1,
        valid_size: 0,
        test_size: 0,
    }
}

pub fn tiny_samples(seed: u64, n: usize) -> Vec<PairedSample> {
    synthesize(seed, n, &tiny_synth_config()).unwrap().samples
}

/// `(store index, flat offset)` pairs: every tensor gets at least one
/// coordinate, the rest are drawn uniformly.
pub fn sample_coordinates(shapes: &[(usize, usize)], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng(seed);
    let mut out: Vec<(usize, usize)> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| (i, r.gen_range(0..a * b)))
        .collect();
    let total: usize = shapes.iter().map(|&(a, b)| a * b).sum();
    while out.len() < count {
        let mut flat = r.gen_range(0..total);
        for (i, &(a, b)) in shapes.iter().enumerate() {
            if flat < a * b {
                out.push((i, flat));
                break;
            }
            flat -= a * b;
        }
    }
    out
}

pub fn matrix_from(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows)
}
