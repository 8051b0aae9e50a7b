use serde::Serialize;

use crate::encode::{DemanderSet, SupplierSet};
use crate::error::{Error, Result};

/// Nonnegative `rows x cols` unit transport costs, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} cost matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidTransport("costs must be finite and nonnegative".into()));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.entries.iter().map(|c| c * factor).collect(),
        )
    }
}

/// Pairwise Euclidean distances between two point sets.
pub fn euclidean_cost(from: &[(f64, f64)], to: &[(f64, f64)]) -> CostMatrix {
    let mut entries = Vec::with_capacity(from.len() * to.len());
    for &(xs, ys) in from {
        for &(xd, yd) in to {
            entries.push((xd - xs).hypot(yd - ys));
        }
    }
    CostMatrix {
        rows: from.len(),
        cols: to.len(),
        entries,
    }
}

pub fn build_cost(suppliers: &SupplierSet, demanders: &DemanderSet) -> CostMatrix {
    euclidean_cost(suppliers.locations(), demanders.locations())
}
