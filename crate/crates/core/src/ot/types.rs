use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// A length-indexed sequence of `d`-dimensional vectors for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    vectors: Matrix<f64>,
}

impl RepresentationSet {
    pub fn new(vectors: Matrix<f64>) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::Empty("representation set has no vectors".into()));
        }
        if vectors.cols() == 0 {
            return Err(Error::Empty("representation vectors have zero dimension".into()));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("representation set".into()));
        }
        Ok(Self { vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("representation set has no vectors".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "vectors of one set must share a dimension".into(),
            ));
        }
        Self::new(Matrix::from_rows(rows))
    }

    /// Converts model activations of any float width.
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Result<Self> {
        Self::new(m.cast())
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }
}

/// Pairwise ground costs between two representation sets.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    entries: Matrix<f64>,
}

impl CostMatrix {
    pub fn new(entries: Matrix<f64>) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Empty("cost matrix must be at least 1x1".into()));
        }
        if entries.as_slice().iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidArgument(
                "cost entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(Error::Shape("ragged cost matrix".into()));
        }
        Self::new(Matrix::from_rows(rows))
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    pub fn entries(&self) -> &Matrix<f64> {
        &self.entries
    }

    pub fn mean(&self) -> f64 {
        self.entries.sum() / self.entries.len() as f64
    }

    pub fn transpose(&self) -> Self {
        Self {
            entries: self.entries.transpose(),
        }
    }
}

/// Coupling with uniform marginals: rows sum to `1/n`, columns to `1/m`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    entries: Matrix<f64>,
}

impl TransportPlan {
    pub(crate) fn from_entries(entries: Matrix<f64>) -> Self {
        Self { entries }
    }

    /// Checks shape and non-negativity; marginals are reported by
    /// [`TransportPlan::marginal_violation`], not enforced here.
    pub fn new(entries: Matrix<f64>) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Empty("transport plan must be at least 1x1".into()));
        }
        if entries.as_slice().iter().any(|&z| !(z >= 0.0) || !z.is_finite()) {
            return Err(Error::InvalidArgument(
                "transport plan entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    pub fn entries(&self) -> &Matrix<f64> {
        &self.entries
    }

    pub fn row_marginal(&self) -> f64 {
        1.0 / self.rows() as f64
    }

    pub fn col_marginal(&self) -> f64 {
        1.0 / self.cols() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.sum()
    }

    /// Largest absolute row or column marginal error.
    pub fn marginal_violation(&self) -> f64 {
        let (n, m) = self.entries.shape();
        let a = self.row_marginal();
        let b = self.col_marginal();
        let mut worst = 0.0f64;
        let mut col_sums = vec![0.0; m];
        for i in 0..n {
            let row = self.entries.row(i);
            worst = worst.max((row.iter().sum::<f64>() - a).abs());
            for (s, &z) in col_sums.iter_mut().zip(row) {
                *s += z;
            }
        }
        for s in col_sums {
            worst = worst.max((s - b).abs());
        }
        worst
    }

    /// `Σ_ij Z_ij C_ij`
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        self.entries
            .as_slice()
            .iter()
            .zip(cost.entries().as_slice())
            .map(|(z, c)| z * c)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct OtSolution {
    pub plan: TransportPlan,
    /// `W = Σ_ij Z_ij C_ij` on the returned plan.
    pub distance: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
    /// False when an iterative solver stopped at `max_iters` before reaching
    /// its tolerance (the plan is still repaired to feasibility).
    pub converged: bool,
}

impl OtSolution {
    pub(crate) fn from_plan(plan: TransportPlan, cost: &CostMatrix, iterations: usize, converged: bool) -> Self {
        let distance = plan.cost(cost);
        let marginal_violation = plan.marginal_violation();
        Self {
            plan,
            distance,
            iterations,
            marginal_violation,
            converged,
        }
    }
}
