//! Log-domain Sinkhorn iteration for entropy-regularized transport.

use super::{CostMatrix, OtSolution, TransportPlan};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropy-regularized transport with uniform marginals.
///
/// Dual potentials are updated in the log domain so small `epsilon` does not
/// underflow. The final plan is rounded onto the feasible set (row sums `1/n`,
/// column sums `1/m`) and the distance is `Σ Z_ij C_ij` on that plan. Hitting
/// `max_iters` is reported through [`OtSolution::converged`], not an error.
pub fn sinkhorn(cost: &CostMatrix, epsilon: f64, max_iters: usize, tol: f64) -> Result<OtSolution> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sinkhorn epsilon must be positive, got {epsilon}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sinkhorn tolerance must be positive, got {tol}"
        )));
    }
    let (n, m) = (cost.rows(), cost.cols());
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let a = 1.0 / n as f64;
    let c = cost.entries();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        // Row update; the change in f measures the current row-marginal error.
        let mut row_err = 0.0f64;
        for i in 0..n {
            let row = c.row(i);
            let lse = log_sum_exp(g.iter().zip(row).map(|(&gj, &cij)| (gj - cij) / epsilon));
            let updated = epsilon * (log_a - lse);
            row_err = row_err.max((a * ((f[i] - updated) / epsilon).exp() - a).abs());
            f[i] = updated;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - c.get(i, j)) / epsilon));
            *gj = epsilon * (log_b - lse);
        }
        // After the column update columns are exact; rows carry the error
        // measured at the start of this sweep.
        if iterations > 1 && row_err <= tol {
            converged = true;
            break;
        }
    }

    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan.set(i, j, ((f[i] + g[j] - c.get(i, j)) / epsilon).exp());
        }
    }
    let plan = round_to_feasible(plan);
    let sol = OtSolution::from_plan(TransportPlan::from_entries(plan), cost, iterations, converged);
    Ok(sol)
}

/// Projects a positive matrix onto the uniform-marginal transport polytope:
/// shrink rows, shrink columns, then redistribute the missing mass as a
/// rank-one correction.
pub(crate) fn round_to_feasible(mut plan: Matrix<f64>) -> Matrix<f64> {
    let (n, m) = plan.shape();
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    for i in 0..n {
        let s: f64 = plan.row(i).iter().sum();
        if s > a {
            let k = a / s;
            plan.row_mut(i).iter_mut().for_each(|z| *z *= k);
        }
    }
    let mut col = vec![0.0; m];
    for i in 0..n {
        for (s, &z) in col.iter_mut().zip(plan.row(i)) {
            *s += z;
        }
    }
    for (j, &s) in col.iter().enumerate() {
        if s > b {
            let k = b / s;
            for i in 0..n {
                let z = plan.get(i, j);
                plan.set(i, j, z * k);
            }
        }
    }
    let err_r: Vec<f64> = (0..n)
        .map(|i| (a - plan.row(i).iter().sum::<f64>()).max(0.0))
        .collect();
    let mut err_c = vec![b; m];
    for i in 0..n {
        for (e, &z) in err_c.iter_mut().zip(plan.row(i)) {
            *e -= z;
        }
    }
    err_c.iter_mut().for_each(|e| *e = e.max(0.0));
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..m {
                let z = plan.get(i, j);
                plan.set(i, j, z + err_r[i] * err_c[j] / total);
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::solve_exact_small;

    #[test]
    fn two_by_two_is_within_five_percent_of_exact() {
        let c = CostMatrix::from_rows(&[vec![4.0, 9.0], vec![1.0, 4.0]]).unwrap();
        let sol = sinkhorn(&c, 0.01 * c.mean(), 500, 1e-6).unwrap();
        assert!((sol.distance - 4.0).abs() / 4.0 <= 0.05, "{}", sol.distance);
        assert!(sol.marginal_violation <= 1e-6);
    }

    #[test]
    fn zero_cost_gives_zero_distance() {
        let c = CostMatrix::new(Matrix::zeros(2, 3)).unwrap();
        let sol = sinkhorn(&c, 0.1, 100, 1e-6).unwrap();
        assert_eq!(sol.distance, 0.0);
        assert!(sol.marginal_violation <= 1e-6);
    }

    #[test]
    fn non_positive_epsilon_is_rejected() {
        let c = CostMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(sinkhorn(&c, 0.0, 10, 1e-6).is_err());
        assert!(sinkhorn(&c, -1.0, 10, 1e-6).is_err());
    }

    #[test]
    fn iteration_cap_is_reported_not_fatal() {
        let c = CostMatrix::from_rows(&[vec![0.0, 5.0, 1.0], vec![2.0, 0.0, 7.0]]).unwrap();
        let sol = sinkhorn(&c, 1e-3, 1, 1e-12).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.marginal_violation <= 1e-12);
    }

    #[test]
    fn rounding_fixes_arbitrary_positive_matrix() {
        let raw = Matrix::from_vec(2, 3, vec![0.9, 0.01, 0.3, 0.2, 0.05, 0.7]);
        let fixed = TransportPlan::from_entries(round_to_feasible(raw));
        assert!(fixed.marginal_violation() < 1e-15);
    }

    #[test]
    fn rectangular_instance_tracks_exact() {
        let c = CostMatrix::from_rows(&[
            vec![0.3, 2.0, 1.1, 4.0, 0.2],
            vec![1.5, 0.1, 3.3, 0.8, 2.2],
        ])
        .unwrap();
        let exact = solve_exact_small(&c).unwrap().distance;
        let approx = sinkhorn(&c, 0.01 * c.mean(), 500, 1e-6).unwrap();
        assert!((approx.distance - exact).abs() / exact <= 0.05);
    }
}
