//! Optimal transport between supplier and demander masses.
//!
//! * [`emd_exact`] solves the unregularized problem with the transportation
//!   simplex.
//! * [`sinkhorn`] runs a fixed number of log-domain scaling iterations and
//!   reports the transport cost `⟨C, p⟩` of the entropic plan.
//! * [`matching_loss`] sums per-joint entropic costs and differentiates them
//!   with respect to the raw heatmap by reverse accumulation through the
//!   unrolled iterations.

mod cost;
mod implicit;
mod kernel;
mod loss;
mod simplex;
mod sinkhorn;

pub use cost::{build_cost, euclidean_cost, CostMatrix};
pub use implicit::implicit_supplier_gradient;
pub use loss::{matching_loss, mse_loss, LossReport, MseTarget};
pub use simplex::emd_exact;
pub use sinkhorn::{
    sinkhorn, sinkhorn_with_gradient, GradientMode, SinkhornConfig, SinkhornGradient,
};

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on `|Σs − Σd|` accepted as balanced.
pub const BALANCE_TOLERANCE: f64 = 1e-9;

/// A coupling between suppliers (rows) and demanders (columns).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    coupling: Vec<f64>,
    objective: f64,
    marginal_residual: f64,
    iterations: usize,
}

impl TransportPlan {
    pub(crate) fn new(
        rows: usize,
        cols: usize,
        coupling: Vec<f64>,
        cost: &CostMatrix,
        supply: &[f64],
        demand: &[f64],
        iterations: usize,
    ) -> Self {
        let objective = coupling
            .iter()
            .zip(cost.entries())
            .map(|(p, c)| p * c)
            .sum();
        let marginal_residual = marginal_residual(rows, cols, &coupling, supply, demand);
        debug_assert!(
            coupling.iter().all(|p| p.is_finite() && *p >= 0.0) && marginal_residual.is_finite(),
            "plan must be a finite nonnegative coupling"
        );
        Self {
            rows,
            cols,
            coupling,
            objective,
            marginal_residual,
            iterations,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major `rows x cols` coupling.
    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.coupling[row * self.cols + col]
    }

    /// `⟨C, p⟩`.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Largest deviation of a row or column sum from its marginal.
    pub fn marginal_residual(&self) -> f64 {
        self.marginal_residual
    }

    /// Simplex pivots or Sinkhorn iterations performed.
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

fn marginal_residual(rows: usize, cols: usize, p: &[f64], supply: &[f64], demand: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut col_sums = vec![0.0; cols];
    for n in 0..rows {
        let row = &p[n * cols..(n + 1) * cols];
        let s: f64 = row.iter().sum();
        worst = worst.max((s - supply[n]).abs());
        for (acc, v) in col_sums.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (s, d) in col_sums.iter().zip(demand) {
        worst = worst.max((s - d).abs());
    }
    worst
}

/// Shape, sign and balance checks shared by both solvers.
pub(crate) fn check_problem(supply: &[f64], demand: &[f64], cost: &CostMatrix) -> Result<()> {
    if supply.is_empty() || demand.is_empty() {
        return Err(Error::InvalidTransport("empty marginal".into()));
    }
    if cost.rows() != supply.len() || cost.cols() != demand.len() {
        return Err(Error::ShapeMismatch(format!(
            "cost is {}x{} but marginals are {} and {}",
            cost.rows(),
            cost.cols(),
            supply.len(),
            demand.len()
        )));
    }
    if supply
        .iter()
        .chain(demand)
        .any(|&m| !(m.is_finite() && m >= 0.0))
    {
        return Err(Error::InvalidTransport("masses must be finite and nonnegative".into()));
    }
    let (s, d): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (s - d).abs() > BALANCE_TOLERANCE {
        return Err(Error::Unbalanced {
            supply: s,
            demand: d,
        });
    }
    if s <= 0.0 {
        return Err(Error::InvalidTransport("marginals carry no mass".into()));
    }
    Ok(())
}
