//! Gradient of the entropic transport cost by implicit differentiation of
//! the converged marginal constraints. Used to cross-check the unrolled
//! gradient; it is only meaningful once the plan satisfies both marginals.

use nalgebra::{DMatrix, DVector};

use super::sinkhorn::Reduced;
use super::{check_problem, CostMatrix, TransportPlan};
use crate::error::{Error, Result};

/// `∂⟨C, p*⟩/∂s` at a converged entropic plan `p*`, up to an additive
/// constant (only mass-preserving perturbations of `s` are meaningful).
/// Zero-mass suppliers get 0.
pub fn implicit_supplier_gradient(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
    plan: &TransportPlan,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_problem(supply, demand, cost)?;
    if plan.rows() != supply.len() || plan.cols() != demand.len() {
        return Err(Error::ShapeMismatch("plan does not match marginals".into()));
    }
    let problem = Reduced::new(supply, demand, cost);
    let (nr, nc) = (problem.rows.len(), problem.cols.len());
    let mut reduced_plan = Vec::with_capacity(nr * nc);
    for &n in &problem.rows {
        for &m in &problem.cols {
            reduced_plan.push(plan.get(n, m));
        }
    }
    let g = implicit_gradient_reduced(nr, nc, &reduced_plan, &problem.cost, 1.0 / lambda)?;
    let mut out = vec![0.0; supply.len()];
    for (&n, v) in problem.rows.iter().zip(g) {
        out[n] = v;
    }
    Ok(out)
}

/// With `p = exp((f ⊕ g − C)/ε)` and constraints `p1 = a`, `pᵀ1 = b`, the
/// adjoint `y` solves `A y = c` where
/// `A = [[diag(p1), p], [pᵀ, diag(pᵀ1)]] / ε` and `c = ([Σ_m C p], [Σ_n C p]) / ε`.
/// The first `nr` entries of `y` are the supplier gradient. `A` has the
/// gauge null vector `(1, −1)`, removed by pinning the last column potential.
pub(crate) fn implicit_gradient_reduced(
    nr: usize,
    nc: usize,
    plan: &[f64],
    cost: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let dim = nr + nc - 1;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for i in 0..nr {
        for j in 0..nc {
            let p = plan[i * nc + j] / eps;
            let w = cost[i * nc + j] * p;
            a[(i, i)] += p;
            rhs[i] += w;
            if j < nc - 1 {
                let col = nr + j;
                a[(col, col)] += p;
                a[(i, col)] += p;
                a[(col, i)] += p;
                rhs[col] += w;
            }
        }
    }
    let y = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidTransport("implicit system is singular".into()))?;
    Ok(y.iter().take(nr).copied().collect())
}
