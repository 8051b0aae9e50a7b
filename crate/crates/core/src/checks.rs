//! Randomized self-checks: Sinkhorn against the exact solver, the MSE risk
//! decomposition, and matching-loss gradients against finite differences.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{verify_decomposition, DecompositionSample};
use crate::encode::{build_dot_heatmap, build_gaussian_heatmap, DemanderMode, GaussianSpec};
use crate::error::{Error, Result};
use crate::grid::{seeded_rng, GridGeometry, Heatmap, Keypoint, PoseInstance, SeededRng};
use crate::transport::{emd_exact, euclidean_cost, matching_loss, sinkhorn, CostMatrix, SinkhornConfig};

/// A random balanced problem: points in `[0, extent]²`, masses uniform then
/// normalized to one.
#[derive(Debug, Clone)]
pub struct RandomProblem {
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub cost: CostMatrix,
}

pub fn random_problem(rng: &mut SeededRng, n: usize, m: usize, extent: f64) -> RandomProblem {
    let mut points = |k: usize| -> Vec<(f64, f64)> {
        (0..k)
            .map(|_| (rng.gen::<f64>() * extent, rng.gen::<f64>() * extent))
            .collect()
    };
    let from = points(n);
    let to = points(m);
    let mut masses = |k: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    let supply = masses(n);
    let demand = masses(m);
    RandomProblem {
        supply,
        demand,
        cost: euclidean_cost(&from, &to),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub trials: usize,
    /// `max |⟨C, p_λ⟩ − EMD|`.
    pub max_gap: f64,
    pub mean_gap: f64,
    pub max_marginal_residual: f64,
}

/// Compares Sinkhorn with the exact solver on `trials` random problems with
/// `n` suppliers and `m` demanders. `n = 0` draws the supplier count
/// uniformly from `2..=64` per trial.
pub fn sinkhorn_oracle_check(n: usize, m: usize, cfg: &SinkhornConfig, trials: usize, seed: u64) -> Result<OracleReport> {
    if trials == 0 || m == 0 {
        return Err(Error::Config("need at least one trial and one demander".into()));
    }
    let mut rng = seeded_rng(seed);
    let (mut max_gap, mut sum_gap, mut max_res) = (0.0f64, 0.0, 0.0f64);
    for _ in 0..trials {
        let rows = if n == 0 { rng.gen_range(2..=64) } else { n };
        let p = random_problem(&mut rng, rows, m, 8.0);
        let exact = emd_exact(&p.supply, &p.demand, &p.cost)?;
        let reg = sinkhorn(&p.supply, &p.demand, &p.cost, cfg)?;
        let gap = (reg.objective() - exact.objective()).abs();
        max_gap = max_gap.max(gap);
        sum_gap += gap;
        max_res = max_res.max(reg.marginal_residual());
    }
    Ok(OracleReport {
        trials,
        max_gap,
        mean_gap: sum_gap / trials as f64,
        max_marginal_residual: max_res,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub trials: usize,
    pub batch: usize,
    pub max_residual: f64,
    pub mean_lhs: f64,
}

/// Random predicted heatmaps (uniform in `[-0.5, 1.5)`) against random dots,
/// `batch` samples per trial.
pub fn decomposition_check(
    geometry: &GridGeometry,
    spec: &GaussianSpec,
    trials: usize,
    batch: usize,
    seed: u64,
) -> Result<DecompositionCheck> {
    if trials == 0 || batch == 0 {
        return Err(Error::Config("need at least one trial and one sample".into()));
    }
    let mut rng = seeded_rng(seed);
    let (mut max_residual, mut lhs) = (0.0f64, 0.0);
    for _ in 0..trials {
        let samples = (0..batch)
            .map(|_| {
                let kp = Keypoint::new(rng.gen::<f64>() * geometry.max_x(), rng.gen::<f64>() * geometry.max_y());
                let predicted = Heatmap::from_fn(*geometry, |_, _| rng.gen::<f64>() * 2.0 - 0.5)?;
                Ok(DecompositionSample {
                    predicted,
                    gaussian: build_gaussian_heatmap(kp, geometry, spec)?,
                    convention: spec.convention,
                    dot: build_dot_heatmap(kp, geometry)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = verify_decomposition(&samples)?;
        max_residual = max_residual.max(report.residual);
        lhs += report.lhs;
    }
    Ok(DecompositionCheck {
        trials,
        batch,
        max_residual,
        mean_lhs: lhs / trials as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub trials: usize,
    pub step: f64,
    /// Worst `max|g − fd| / max(‖fd‖∞, 1e-8)` over trials.
    pub max_relative_error: f64,
}

/// Heatmap values closer to zero than this are redrawn so that central
/// differences never straddle the relu kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// Single-joint instances with values uniform in `[-0.5, 1)`; compares the
/// matching-loss gradient with central differences of step `step`.
pub fn gradient_check(
    geometry: &GridGeometry,
    demanders: DemanderMode,
    cfg: &SinkhornConfig,
    trials: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck> {
    if trials == 0 || step.is_nan() || step <= 0.0 || step >= KINK_MARGIN {
        return Err(Error::Config(format!("need trials >= 1 and 0 < step < {KINK_MARGIN}")));
    }
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let kp = Keypoint::new(rng.gen::<f64>() * geometry.max_x(), rng.gen::<f64>() * geometry.max_y());
        let values: Vec<f64> = (0..geometry.len())
            .map(|_| loop {
                let v = rng.gen::<f64>() * 1.5 - 0.5;
                if v.abs() >= KINK_MARGIN {
                    break v;
                }
            })
            .collect();
        let loss_at = |v: &[f64]| -> Result<f64> {
            let inst = PoseInstance::new(vec![kp], vec![Heatmap::new(*geometry, v.to_vec())?])?;
            Ok(matching_loss(&inst, demanders, cfg)?.total())
        };
        let inst = PoseInstance::new(vec![kp], vec![Heatmap::new(*geometry, values.clone())?])?;
        let grad = matching_loss(&inst, demanders, cfg)?.into_gradients().remove(0);
        let mut fd = vec![0.0; values.len()];
        let mut probe = values.clone();
        for i in 0..values.len() {
            probe[i] = values[i] + step;
            let up = loss_at(&probe)?;
            probe[i] = values[i] - step;
            let down = loss_at(&probe)?;
            probe[i] = values[i];
            fd[i] = (up - down) / (2.0 * step);
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let diff = grad.iter().zip(&fd).fold(0.0f64, |m, (g, f)| m.max((g - f).abs()));
        worst = worst.max(diff / scale);
    }
    Ok(GradientCheck {
        trials,
        step,
        max_relative_error: worst,
    })
}
