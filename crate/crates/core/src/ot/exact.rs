//! Exact transport for small instances.
//!
//! Uniform marginals become integers after scaling by `K = lcm(n, m)`: every
//! row supplies `K/n` units and every column demands `K/m`. The scaled problem
//! is a min-cost flow on the complete bipartite graph, solved by successive
//! shortest augmenting paths. Integral optimal flows are vertices of the
//! transportation polytope, so for `n = m` the plan is a permutation scaled by
//! `1/n`.

use super::{CostMatrix, OtSolution, TransportPlan};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Largest `n·m` accepted by [`solve_exact_small`].
pub const EXACT_CELL_LIMIT: usize = 64;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn solve_exact_small(cost: &CostMatrix) -> Result<OtSolution> {
    let (n, m) = (cost.rows(), cost.cols());
    if n * m > EXACT_CELL_LIMIT {
        return Err(Error::TooLarge {
            n,
            m,
            limit: EXACT_CELL_LIMIT,
        });
    }
    let k = n / gcd(n, m) * m;
    let flow = min_cost_flow(cost, k / n, k / m);
    let scale = 1.0 / k as f64;
    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan.set(i, j, flow[i * m + j] as f64 * scale);
        }
    }
    Ok(OtSolution::from_plan(
        TransportPlan::from_entries(plan),
        cost,
        0,
        true,
    ))
}

/// Flow per cell (row-major) of a min-cost transport with integer supplies.
fn min_cost_flow(cost: &CostMatrix, supply: usize, demand: usize) -> Vec<usize> {
    let (n, m) = (cost.rows(), cost.cols());
    let mut flow = vec![0usize; n * m];
    let mut supply_left = vec![supply; n];
    let mut demand_left = vec![demand; m];
    let mut remaining = supply * n;

    // Nodes 0..n are rows, n..n+m are columns.
    let nodes = n + m;
    while remaining > 0 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred: Vec<Option<usize>> = vec![None; nodes];
        for i in 0..n {
            if supply_left[i] > 0 {
                dist[i] = 0.0;
            }
        }
        // Bellman-Ford over the residual graph; it has no negative cycles
        // because every augmentation follows a shortest path.
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + cost.get(i, j);
                        if d < dist[n + j] - 1e-12 {
                            dist[n + j] = d;
                            pred[n + j] = Some(i);
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if !dist[n + j].is_finite() {
                    continue;
                }
                for i in 0..n {
                    if flow[i * m + j] > 0 {
                        let d = dist[n + j] - cost.get(i, j);
                        if d < dist[i] - 1e-12 {
                            dist[i] = d;
                            pred[i] = Some(n + j);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let sink = (0..m)
            .filter(|&j| demand_left[j] > 0 && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]))
            .expect("balanced transport always has an augmenting path");

        let mut path = Vec::new();
        let mut node = n + sink;
        while let Some(p) = pred[node] {
            path.push((p, node));
            node = p;
        }
        let source = node;
        let mut amount = supply_left[source].min(demand_left[sink]);
        for &(from, to) in &path {
            if from >= n {
                // Backward residual edge: cancels flow on (to, from - n).
                amount = amount.min(flow[to * m + (from - n)]);
            }
        }
        for &(from, to) in &path {
            if from < n {
                flow[from * m + (to - n)] += amount;
            } else {
                flow[to * m + (from - n)] -= amount;
            }
        }
        supply_left[source] -= amount;
        demand_left[sink] -= amount;
        remaining -= amount;
    }
    flow
}
