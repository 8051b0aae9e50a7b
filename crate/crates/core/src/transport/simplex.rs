//! Exact EMD by the transportation simplex (MODI potentials, basis-tree cycles).

use std::collections::VecDeque;

use super::{check_problem, CostMatrix, TransportPlan};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
/// Consecutive zero-step pivots before entering-cell selection switches to
/// the first improving cell.
const DEGENERATE_STREAK: usize = 50;

/// Optimal vertex of the transportation polytope.
pub fn emd_exact(supply: &[f64], demand: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    check_problem(supply, demand, cost)?;
    let mut tableau = Tableau::northwest_corner(supply, demand, cost);
    let pivots = tableau.optimize()?;
    let (n, m) = (supply.len(), demand.len());
    let mut coupling = vec![0.0; n * m];
    for (&(i, j), &x) in tableau.basis.iter().zip(&tableau.flow) {
        coupling[i * m + j] = x.max(0.0);
    }
    Ok(TransportPlan::new(n, m, coupling, cost, supply, demand, pivots))
}

struct Tableau<'a> {
    n: usize,
    m: usize,
    cost: &'a CostMatrix,
    /// Basic cells; always `n + m - 1` of them forming a spanning tree of the
    /// bipartite row/column graph.
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// Basis slot of each cell, or `NONE`.
    slot: Vec<usize>,
}

impl<'a> Tableau<'a> {
    fn northwest_corner(supply: &[f64], demand: &[f64], cost: &'a CostMatrix) -> Self {
        let (n, m) = (supply.len(), demand.len());
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let mut basis = Vec::with_capacity(n + m - 1);
        let mut flow = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]).max(0.0);
            basis.push((i, j));
            flow.push(x);
            a[i] -= x;
            b[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && a[i] <= b[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut slot = vec![NONE; n * m];
        for (k, &(i, j)) in basis.iter().enumerate() {
            slot[i * m + j] = k;
        }
        Self {
            n,
            m,
            cost,
            basis,
            flow,
            slot,
        }
    }

    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut rows = vec![Vec::new(); self.n];
        let mut cols = vec![Vec::new(); self.m];
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            rows[i].push(k);
            cols[j].push(k);
        }
        (rows, cols)
    }

    /// Dual potentials with `u[0] = 0` and `u_i + v_j = C_ij` on basic cells.
    fn potentials(&self, rows: &[Vec<usize>], cols: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            if node < self.n {
                for &k in &rows[node] {
                    let (i, j) = self.basis[k];
                    if v[j].is_nan() {
                        v[j] = self.cost.get(i, j) - u[i];
                        queue.push_back(self.n + j);
                    }
                }
            } else {
                let j = node - self.n;
                for &k in &cols[j] {
                    let (i, _) = self.basis[k];
                    if u[i].is_nan() {
                        u[i] = self.cost.get(i, j) - v[j];
                        queue.push_back(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Basis slots on the tree path from row `i` to column `j`, starting at
    /// the edge incident to row `i`.
    fn tree_path(&self, rows: &[Vec<usize>], cols: &[Vec<usize>], i: usize, j: usize) -> Vec<usize> {
        let total = self.n + self.m;
        let mut parent_edge = vec![NONE; total];
        let mut parent = vec![NONE; total];
        let mut seen = vec![false; total];
        seen[i] = true;
        let target = self.n + j;
        let mut queue = VecDeque::from([i]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            let edges = if node < self.n {
                &rows[node]
            } else {
                &cols[node - self.n]
            };
            for &k in edges {
                let (r, c) = self.basis[k];
                let next = if node < self.n { self.n + c } else { r };
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = node;
                    parent_edge[next] = k;
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != i {
            path.push(parent_edge[node]);
            node = parent[node];
        }
        path.reverse();
        path
    }

    fn optimize(&mut self) -> Result<usize> {
        let scale = self.cost.entries().iter().fold(1.0f64, |a, &c| a.max(c));
        let tol = 1e-12 * scale;
        let limit = 10_000 + 50 * self.n * self.m;
        let mut streak = 0;
        for pivot in 0..limit {
            let (rows, cols) = self.adjacency();
            let (u, v) = self.potentials(&rows, &cols);

            let mut entering = None;
            let mut best = -tol;
            'scan: for i in 0..self.n {
                for j in 0..self.m {
                    if self.slot[i * self.m + j] != NONE {
                        continue;
                    }
                    let reduced = self.cost.get(i, j) - u[i] - v[j];
                    if reduced < best {
                        best = reduced;
                        entering = Some((i, j));
                        if streak >= DEGENERATE_STREAK {
                            break 'scan;
                        }
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok(pivot);
            };

            let path = self.tree_path(&rows, &cols, ei, ej);
            // Edges at even positions of the path lose flow.
            let mut leave = NONE;
            let mut theta = f64::INFINITY;
            for &k in path.iter().step_by(2) {
                if self.flow[k] < theta || (self.flow[k] == theta && k < leave) {
                    theta = self.flow[k];
                    leave = k;
                }
            }
            let theta = theta.max(0.0);
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[k] -= theta;
                } else {
                    self.flow[k] += theta;
                }
            }
            streak = if theta == 0.0 { streak + 1 } else { 0 };

            let (li, lj) = self.basis[leave];
            self.slot[li * self.m + lj] = NONE;
            self.basis[leave] = (ei, ej);
            self.flow[leave] = theta;
            self.slot[ei * self.m + ej] = leave;
        }
        Err(Error::InvalidTransport(format!(
            "transportation simplex exceeded {limit} pivots"
        )))
    }
}
