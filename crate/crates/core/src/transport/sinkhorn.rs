//! Entropic transport by Sinkhorn scaling, with reverse-mode gradients
//! through the unrolled iterations.
//!
//! With `ε = 1/λ` the plan is `p_nm = exp((f_n + g_m − C_nm)/ε)` and one
//! iteration is
//!
//! ```text
//! f ← ε log a − ε LSE_m((g_m − C_nm)/ε)
//! g ← ε log b − ε LSE_n((f_n − C_nm)/ε)
//! ```
//!
//! starting from `g = 0`. Columns are exactly balanced after every
//! iteration; rows converge. Zero-mass suppliers and demanders are dropped
//! before iterating (their plan rows/columns are identically zero).

use serde::{Deserialize, Serialize};

use super::implicit::implicit_gradient_reduced;
use super::kernel::ShiftedKernel;
use super::{check_problem, CostMatrix, TransportPlan};
use crate::error::{Error, Result};

/// How [`sinkhorn_with_gradient`] differentiates the transport cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Reverse accumulation through every stored iteration. Exact for the
    /// computed forward value.
    #[default]
    Unrolled,
    /// Implicit differentiation of the converged fixed point.
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Inverse entropic temperature.
    pub lambda: f64,
    pub iterations: usize,
    pub log_domain: bool,
    /// Stop once the row residual falls below this value. `None` runs the
    /// full iteration count.
    pub tolerance: Option<f64>,
    pub gradient: GradientMode,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            iterations: 1000,
            log_domain: true,
            tolerance: None,
            gradient: GradientMode::Unrolled,
        }
    }
}

impl SinkhornConfig {
    pub fn new(lambda: f64, iterations: usize) -> Result<Self> {
        let cfg = Self {
            lambda,
            iterations,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if let Some(tol) = self.tolerance {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

/// Entropic plan plus `∂⟨C, p⟩/∂s` for every supplier.
#[derive(Debug, Clone)]
pub struct SinkhornGradient {
    pub plan: TransportPlan,
    /// Zero for suppliers without mass, which do not enter the solve.
    pub supply_gradient: Vec<f64>,
}

/// Runs Sinkhorn and returns the entropic plan. Its objective is the
/// transport cost `⟨C, p⟩`, without the entropy term.
pub fn sinkhorn(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_problem(supply, demand, cost)?;
    let problem = Reduced::new(supply, demand, cost);
    let solver = Solver::new(&problem, cfg);
    let run = solver.forward(cfg, false)?;
    Ok(problem.expand_plan(&solver.plan(&run.f, &run.g), cost, supply, demand, run.iterations))
}

pub fn sinkhorn_with_gradient(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<SinkhornGradient> {
    cfg.validate()?;
    check_problem(supply, demand, cost)?;
    let problem = Reduced::new(supply, demand, cost);
    let solver = Solver::new(&problem, cfg);
    let record = cfg.gradient == GradientMode::Unrolled;
    let run = solver.forward(cfg, record)?;
    let plan = solver.plan(&run.f, &run.g);
    let reduced_grad = match cfg.gradient {
        GradientMode::Unrolled => solver.backward(&run, &plan),
        GradientMode::Implicit => implicit_gradient_reduced(
            problem.rows.len(),
            problem.cols.len(),
            &plan,
            &problem.cost,
            solver.eps,
        )?,
    };
    let mut supply_gradient = vec![0.0; supply.len()];
    for (&n, gr) in problem.rows.iter().zip(reduced_grad) {
        supply_gradient[n] = gr;
    }
    Ok(SinkhornGradient {
        plan: problem.expand_plan(&plan, cost, supply, demand, run.iterations),
        supply_gradient,
    })
}

/// The problem restricted to strictly positive marginals.
pub(crate) struct Reduced {
    pub(crate) rows: Vec<usize>,
    pub(crate) cols: Vec<usize>,
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
    /// `rows.len() x cols.len()`.
    pub(crate) cost: Vec<f64>,
}

impl Reduced {
    pub(crate) fn new(supply: &[f64], demand: &[f64], cost: &CostMatrix) -> Self {
        let rows: Vec<usize> = (0..supply.len()).filter(|&n| supply[n] > 0.0).collect();
        let cols: Vec<usize> = (0..demand.len()).filter(|&m| demand[m] > 0.0).collect();
        let mut c = Vec::with_capacity(rows.len() * cols.len());
        for &n in &rows {
            for &m in &cols {
                c.push(cost.get(n, m));
            }
        }
        Self {
            a: rows.iter().map(|&n| supply[n]).collect(),
            b: cols.iter().map(|&m| demand[m]).collect(),
            rows,
            cols,
            cost: c,
        }
    }

    pub(crate) fn expand_plan(
        &self,
        reduced: &[f64],
        cost: &CostMatrix,
        supply: &[f64],
        demand: &[f64],
        iterations: usize,
    ) -> TransportPlan {
        let (n_all, m_all) = (supply.len(), demand.len());
        let mut coupling = vec![0.0; n_all * m_all];
        let nc = self.cols.len();
        for (i, &n) in self.rows.iter().enumerate() {
            for (j, &m) in self.cols.iter().enumerate() {
                coupling[n * m_all + m] = reduced[i * nc + j];
            }
        }
        TransportPlan::new(n_all, m_all, coupling, cost, supply, demand, iterations)
    }
}

pub(crate) struct Run {
    pub(crate) f: Vec<f64>,
    pub(crate) g: Vec<f64>,
    pub(crate) iterations: usize,
    /// `f` after each iteration, `iterations x nr`; empty unless recorded.
    f_tape: Vec<f64>,
    g_tape: Vec<f64>,
}

struct Solver<'p> {
    problem: &'p Reduced,
    eps: f64,
    nr: usize,
    nc: usize,
    /// Rows update: outer = suppliers, inner = demanders.
    rows_kernel: ShiftedKernel,
    /// Columns update: outer = demanders, inner = suppliers.
    cols_kernel: ShiftedKernel,
}

impl<'p> Solver<'p> {
    fn new(problem: &'p Reduced, cfg: &SinkhornConfig) -> Self {
        let eps = 1.0 / cfg.lambda;
        let (nr, nc) = (problem.a.len(), problem.b.len());
        let mut transposed = vec![0.0; nr * nc];
        for i in 0..nr {
            for j in 0..nc {
                transposed[j * nr + i] = problem.cost[i * nc + j];
            }
        }
        Self {
            problem,
            eps,
            nr,
            nc,
            rows_kernel: ShiftedKernel::new(nr, nc, problem.cost.clone(), eps),
            cols_kernel: ShiftedKernel::new(nc, nr, transposed, eps),
        }
    }

    fn forward(&self, cfg: &SinkhornConfig, record: bool) -> Result<Run> {
        if cfg.log_domain {
            Ok(self.forward_log(cfg, record))
        } else {
            self.forward_scaling(cfg, record)
        }
    }

    fn forward_log(&self, cfg: &SinkhornConfig, record: bool) -> Run {
        let eps = self.eps;
        let la: Vec<f64> = self.problem.a.iter().map(|a| eps * a.ln()).collect();
        let lb: Vec<f64> = self.problem.b.iter().map(|b| eps * b.ln()).collect();
        let mut f = vec![0.0; self.nr];
        let mut g = vec![0.0; self.nc];
        let mut f_next = vec![0.0; self.nr];
        let mut scratch_r = vec![0.0; self.nr];
        let mut scratch_c = vec![0.0; self.nc];
        let capacity = if record { cfg.iterations } else { 0 };
        let mut f_tape = Vec::with_capacity(capacity * self.nr);
        let mut g_tape = Vec::with_capacity(capacity * self.nc);

        self.rows_kernel.soft_min(&g, &la, &mut f, &mut scratch_c);
        let mut t = 0;
        loop {
            t += 1;
            self.cols_kernel.soft_min(&f, &lb, &mut g, &mut scratch_r);
            if record {
                f_tape.extend_from_slice(&f);
                g_tape.extend_from_slice(&g);
            }
            if t == cfg.iterations {
                break;
            }
            self.rows_kernel.soft_min(&g, &la, &mut f_next, &mut scratch_c);
            if let Some(tol) = cfg.tolerance {
                // Row sums of the current plan are a_n exp((f_n − f'_n)/ε).
                let residual = self
                    .problem
                    .a
                    .iter()
                    .zip(f.iter().zip(&f_next))
                    .map(|(a, (f0, f1))| (a * (((f0 - f1) / eps).exp() - 1.0)).abs())
                    .fold(0.0, f64::max);
                if residual <= tol {
                    break;
                }
            }
            std::mem::swap(&mut f, &mut f_next);
        }
        Run {
            f,
            g,
            iterations: t,
            f_tape,
            g_tape,
        }
    }

    /// Classical `u = a / Kv`, `v = b / Kᵀu` scaling. Fails rather than
    /// silently losing mass when the kernel or the scalings leave the
    /// representable range.
    fn forward_scaling(&self, cfg: &SinkhornConfig, record: bool) -> Result<Run> {
        let (nr, nc, eps) = (self.nr, self.nc, self.eps);
        let kernel: Vec<f64> = self.problem.cost.iter().map(|c| (-c / eps).exp()).collect();
        let mut u = vec![1.0; nr];
        let mut v = vec![1.0; nc];
        let mut u_new = vec![0.0; nr];
        let mut f_tape = Vec::new();
        let mut g_tape = Vec::new();
        let mut t = 0;
        loop {
            for i in 0..nr {
                let kv: f64 = (0..nc).map(|j| kernel[i * nc + j] * v[j]).sum();
                u_new[i] = self.problem.a[i] / kv;
            }
            if let (Some(tol), true) = (cfg.tolerance, t > 0) {
                let residual = u
                    .iter()
                    .zip(&u_new)
                    .zip(&self.problem.a)
                    .map(|((u0, u1), a)| (a * (u0 / u1 - 1.0)).abs())
                    .fold(0.0, f64::max);
                if residual <= tol {
                    break;
                }
            }
            std::mem::swap(&mut u, &mut u_new);
            for j in 0..nc {
                let ktu: f64 = (0..nr).map(|i| kernel[i * nc + j] * u[i]).sum();
                v[j] = self.problem.b[j] / ktu;
            }
            if u.iter().chain(&v).any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::NumericOverflow(format!(
                    "scalings left the f64 range at lambda = {}",
                    cfg.lambda
                )));
            }
            if record {
                f_tape.extend(u.iter().map(|x| eps * x.ln()));
                g_tape.extend(v.iter().map(|x| eps * x.ln()));
            }
            t += 1;
            if t == cfg.iterations {
                break;
            }
        }
        Ok(Run {
            f: u.iter().map(|x| eps * x.ln()).collect(),
            g: v.iter().map(|x| eps * x.ln()).collect(),
            iterations: t,
            f_tape,
            g_tape,
        })
    }

    fn plan(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let nc = self.nc;
        let mut p = Vec::with_capacity(self.nr * nc);
        for (i, fi) in f.iter().enumerate() {
            for (j, gj) in g.iter().enumerate() {
                p.push(((fi + gj - self.problem.cost[i * nc + j]) / self.eps).exp());
            }
        }
        p
    }

    /// Adjoint of `⟨C, p⟩` with respect to the supplier masses.
    fn backward(&self, run: &Run, plan: &[f64]) -> Vec<f64> {
        let (nr, nc, eps) = (self.nr, self.nc, self.eps);
        let cost = &self.problem.cost;
        let mut f_bar = vec![0.0; nr];
        let mut g_bar = vec![0.0; nc];
        for i in 0..nr {
            for j in 0..nc {
                let w = cost[i * nc + j] * plan[i * nc + j] / eps;
                f_bar[i] += w;
                g_bar[j] += w;
            }
        }
        let mut a_bar = vec![0.0; nr];
        let mut acc_r = vec![0.0; nr];
        let mut acc_c = vec![0.0; nc];
        let mut scratch_r = vec![0.0; nr];
        let mut scratch_c = vec![0.0; nc];
        for t in (1..=run.iterations).rev() {
            let f_t = &run.f_tape[(t - 1) * nr..t * nr];
            // g_t = G(f_t)
            acc_r.iter_mut().for_each(|x| *x = 0.0);
            self.cols_kernel
                .accumulate_transposed(f_t, &g_bar, &mut acc_r, &mut scratch_r);
            for (fb, acc) in f_bar.iter_mut().zip(&acc_r) {
                *fb -= acc;
            }
            // f_t = F(a, g_{t-1})
            for ((ab, fb), a) in a_bar.iter_mut().zip(&f_bar).zip(&self.problem.a) {
                *ab += eps * fb / a;
            }
            if t > 1 {
                let g_prev = &run.g_tape[(t - 2) * nc..(t - 1) * nc];
                acc_c.iter_mut().for_each(|x| *x = 0.0);
                self.rows_kernel
                    .accumulate_transposed(g_prev, &f_bar, &mut acc_c, &mut scratch_c);
                for (gb, acc) in g_bar.iter_mut().zip(&acc_c) {
                    *gb = -acc;
                }
            }
            f_bar.iter_mut().for_each(|x| *x = 0.0);
        }
        a_bar
    }
}
