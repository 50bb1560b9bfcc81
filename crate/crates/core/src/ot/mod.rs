//! Optimal transport between representation sets with uniform marginals.
//!
//! The ground cost is the squared Euclidean distance between vectors. Two
//! solvers are provided: [`sinkhorn`] (log-domain, entropy-regularized,
//! repaired to exact feasibility) for training and retrieval, and
//! [`solve_exact_small`] (integer min-cost flow) for tiny instances and tests.

mod exact;
mod sinkhorn;
mod types;

use serde::{Deserialize, Serialize};

pub use exact::{solve_exact_small, EXACT_CELL_LIMIT};
pub use sinkhorn::sinkhorn;
pub use types::{CostMatrix, OtSolution, RepresentationSet, TransportPlan};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `C_ij = ‖hs_i − ht_j‖²`
pub fn squared_euclidean_cost(hs: &RepresentationSet, ht: &RepresentationSet) -> Result<CostMatrix> {
    if hs.dim() != ht.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dimension {} vs target dimension {}",
            hs.dim(),
            ht.dim()
        )));
    }
    let (n, m) = (hs.len(), ht.len());
    let mut c = Matrix::zeros(n, m);
    for i in 0..n {
        let a = hs.vector(i);
        for j in 0..m {
            let d: f64 = a
                .iter()
                .zip(ht.vector(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            c.set(i, j, d);
        }
    }
    CostMatrix::new(c)
}

/// Solver settings shared by training, retrieval and diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Regularization relative to the instance: `epsilon = epsilon_scale * mean(C)`.
    pub epsilon_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Use [`solve_exact_small`] whenever `n·m ≤ EXACT_CELL_LIMIT`.
    pub prefer_exact: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon_scale: 0.01,
            max_iters: 500,
            tol: 1e-6,
            prefer_exact: false,
        }
    }
}

impl SolverConfig {
    pub fn exact() -> Self {
        Self {
            prefer_exact: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_scale > 0.0) || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "solver needs epsilon_scale > 0, tol > 0 and max_iters >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Solves one instance with the configured solver.
    pub fn solve(&self, cost: &CostMatrix) -> Result<OtSolution> {
        if self.prefer_exact && cost.rows() * cost.cols() <= EXACT_CELL_LIMIT {
            return solve_exact_small(cost);
        }
        let mean = cost.mean();
        if mean == 0.0 {
            // Every feasible plan is optimal; the product coupling is one.
            let (n, m) = (cost.rows(), cost.cols());
            let plan = Matrix::filled(n, m, 1.0 / (n * m) as f64);
            return Ok(OtSolution {
                plan: TransportPlan::new(plan)?,
                distance: 0.0,
                iterations: 0,
                marginal_violation: 0.0,
                converged: true,
            });
        }
        sinkhorn(cost, self.epsilon_scale * mean, self.max_iters, self.tol)
    }
}

/// Cost matrix and solution for one pair of sets.
pub fn transport(hs: &RepresentationSet, ht: &RepresentationSet, cfg: &SolverConfig) -> Result<OtSolution> {
    let cost = squared_euclidean_cost(hs, ht)?;
    cfg.solve(&cost)
}

pub fn wasserstein_distance(hs: &RepresentationSet, ht: &RepresentationSet, cfg: &SolverConfig) -> Result<f64> {
    Ok(transport(hs, ht, cfg)?.distance)
}

/// `∂W/∂hs_i = Σ_j Z_ij · 2 (hs_i − ht_j)` with the plan held fixed.
/// No gradient is produced for `ht`.
pub fn transport_gradient(
    hs: &RepresentationSet,
    ht: &RepresentationSet,
    plan: &TransportPlan,
) -> Result<Matrix<f64>> {
    if plan.rows() != hs.len() || plan.cols() != ht.len() {
        return Err(Error::Shape(format!(
            "plan is {}x{} but sets have {} and {} vectors",
            plan.rows(),
            plan.cols(),
            hs.len(),
            ht.len()
        )));
    }
    if hs.dim() != ht.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dimension {} vs target dimension {}",
            hs.dim(),
            ht.dim()
        )));
    }
    let mut grad = Matrix::zeros(hs.len(), hs.dim());
    for i in 0..hs.len() {
        for j in 0..ht.len() {
            let w = 2.0 * plan.get(i, j);
            if w == 0.0 {
                continue;
            }
            for ((g, &a), &b) in grad.row_mut(i).iter_mut().zip(hs.vector(i)).zip(ht.vector(j)) {
                *g += w * (a - b);
            }
        }
    }
    Ok(grad)
}
