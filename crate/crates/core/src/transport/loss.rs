use serde::Serialize;

use super::{build_cost, sinkhorn_with_gradient, SinkhornConfig};
use crate::encode::{
    build_demanders, build_dot_heatmap, build_gaussian_heatmap, build_suppliers, DemanderMode,
    GaussianSpec,
};
use crate::error::{Error, Result};
use crate::grid::PoseInstance;

/// Per-joint losses and gradients with respect to each raw heatmap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    per_joint: Vec<f64>,
    total: f64,
    /// Row-major, one grid per joint; all zero for masked joints.
    #[serde(skip)]
    gradients: Vec<Vec<f64>>,
    masked: Vec<bool>,
}

impl LossReport {
    fn from_parts(per_joint: Vec<f64>, gradients: Vec<Vec<f64>>, masked: Vec<bool>) -> Result<Self> {
        if masked.iter().all(|&m| m) {
            return Err(Error::EmptyLoss);
        }
        let total = per_joint
            .iter()
            .zip(&masked)
            .filter(|(_, &m)| !m)
            .map(|(l, _)| l)
            .sum();
        Ok(Self {
            per_joint,
            total,
            gradients,
            masked,
        })
    }

    pub fn per_joint(&self) -> &[f64] {
        &self.per_joint
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn gradients(&self) -> &[Vec<f64>] {
        &self.gradients
    }

    pub fn into_gradients(self) -> Vec<Vec<f64>> {
        self.gradients
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }
}

/// Sum over visible joints of the entropic transport cost between the
/// relu-normalized heatmap and the dot's demanders.
///
/// Invisible joints and all-nonpositive heatmaps are masked out with zero
/// gradient.
pub fn matching_loss(
    instance: &PoseInstance,
    demanders: DemanderMode,
    cfg: &SinkhornConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    let k = instance.len();
    let mut per_joint = vec![0.0; k];
    let mut gradients = Vec::with_capacity(k);
    let mut masked = vec![false; k];
    for (j, (kp, h)) in instance.joints().iter().zip(instance.heatmaps()).enumerate() {
        let n = h.geometry().len();
        let suppliers = build_suppliers(h);
        if !kp.visible || suppliers.is_degenerate() {
            masked[j] = true;
            gradients.push(vec![0.0; n]);
            continue;
        }
        let d = build_demanders(*kp, h.geometry(), demanders)?;
        let cost = build_cost(&suppliers, &d);
        let solved = sinkhorn_with_gradient(suppliers.masses(), d.masses(), &cost, cfg)?;
        per_joint[j] = solved.plan.objective();

        // Through s = relu(h) / ‖relu(h)‖₁.
        let a = suppliers.masses();
        let a_bar = &solved.supply_gradient;
        let mean: f64 = a.iter().zip(a_bar).map(|(a, g)| a * g).sum();
        let norm = suppliers.relu_mass();
        let grad = h
            .values()
            .iter()
            .zip(a_bar)
            .map(|(&v, &g)| if v > 0.0 { (g - mean) / norm } else { 0.0 })
            .collect();
        gradients.push(grad);
    }
    LossReport::from_parts(per_joint, gradients, masked)
}

/// Target heatmap for the pixel-wise baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MseTarget {
    Gaussian(GaussianSpec),
    Dot,
}

/// `Σ_k ‖H_k − T_k‖²` over visible joints; gradient `2 (H − T)`.
pub fn mse_loss(instance: &PoseInstance, target: MseTarget) -> Result<LossReport> {
    let k = instance.len();
    let mut per_joint = vec![0.0; k];
    let mut gradients = Vec::with_capacity(k);
    let mut masked = vec![false; k];
    for (j, (kp, h)) in instance.joints().iter().zip(instance.heatmaps()).enumerate() {
        if !kp.visible {
            masked[j] = true;
            gradients.push(vec![0.0; h.geometry().len()]);
            continue;
        }
        let t = match target {
            MseTarget::Gaussian(spec) => build_gaussian_heatmap(*kp, h.geometry(), &spec)?,
            MseTarget::Dot => build_dot_heatmap(*kp, h.geometry())?,
        };
        per_joint[j] = h.squared_distance(&t);
        gradients.push(
            h.values()
                .iter()
                .zip(t.values())
                .map(|(p, t)| 2.0 * (p - t))
                .collect(),
        );
    }
    LossReport::from_parts(per_joint, gradients, masked)
}
