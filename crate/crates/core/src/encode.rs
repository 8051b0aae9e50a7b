//! Supplier and demander distributions, and the baseline target heatmaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{clamp_keypoint, GridGeometry, Heatmap, Keypoint};

/// Below this relu mass a heatmap is treated as carrying no signal.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Probability masses on every pixel of a predicted heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplierSet {
    masses: Vec<f64>,
    locations: Vec<(f64, f64)>,
    relu_mass: f64,
    degenerate: bool,
}

impl SupplierSet {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn locations(&self) -> &[(f64, f64)] {
        &self.locations
    }

    /// `‖relu(h)‖₁` before normalization.
    pub fn relu_mass(&self) -> f64 {
        self.relu_mass
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

/// Which demander construction to use for a dot annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemanderMode {
    /// Four bilinear-weighted demanders on the bracketing 2x2 block.
    Subpixel,
    /// One demander at the center of the containing pixel.
    Naive,
}

/// Demander masses attached to pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DemanderSet {
    masses: Vec<f64>,
    pixels: Vec<(usize, usize)>,
    locations: Vec<(f64, f64)>,
}

impl DemanderSet {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn locations(&self) -> &[(f64, f64)] {
        &self.locations
    }

    /// `(col, row)` of each demander's pixel.
    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Mass-weighted mean of the demander locations.
    pub fn mean_location(&self) -> (f64, f64) {
        self.masses
            .iter()
            .zip(&self.locations)
            .fold((0.0, 0.0), |(sx, sy), (m, (x, y))| (sx + m * x, sy + m * y))
    }

    /// The demander masses painted onto an otherwise zero heatmap.
    pub fn to_heatmap(&self, geometry: &GridGeometry) -> Heatmap {
        let mut h = Heatmap::zeros(*geometry);
        for (&(c, r), &m) in self.pixels.iter().zip(&self.masses) {
            h.set(c, r, m).expect("demander pixel inside grid");
        }
        h
    }
}

/// Where the Gaussian target is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakConvention {
    /// Centered on the dot-containing pixel center; that pixel has value 1.
    PeakOne,
    /// Centered on the raw sub-pixel dot.
    SubpixelCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma: f64,
    pub convention: PeakConvention,
}

impl GaussianSpec {
    pub fn new(sigma: f64, convention: PeakConvention) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma, convention })
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            convention: PeakConvention::PeakOne,
        }
    }
}

/// Suppliers from a predicted heatmap: `relu(h) / ‖relu(h)‖₁`, row-major.
///
/// An all-nonpositive heatmap yields the uniform distribution flagged as
/// degenerate.
pub fn build_suppliers(h: &Heatmap) -> SupplierSet {
    let relu: Vec<f64> = h.values().iter().map(|v| v.max(0.0)).collect();
    let total: f64 = relu.iter().sum();
    let n = relu.len();
    let (masses, degenerate) = if total < DEGENERATE_MASS {
        (vec![1.0 / n as f64; n], true)
    } else {
        (relu.iter().map(|v| v / total).collect(), false)
    };
    SupplierSet {
        masses,
        locations: h.geometry().centers(),
        relu_mass: total,
        degenerate,
    }
}

fn require_visible(kp: &Keypoint) -> Result<()> {
    if kp.visible {
        Ok(())
    } else {
        Err(Error::InvisibleJoint)
    }
}

/// Lower index of the pair of centers bracketing `v` along an axis of `n` pixels.
fn bracket(v: f64, g: f64, n: usize) -> usize {
    ((v / g).floor().max(0.0) as usize).min(n - 2)
}

/// Four demanders on the 2x2 block of pixel centers bracketing the dot.
///
/// Order is `(c0, r0), (c1, r0), (c0, r1), (c1, r1)`. The dot is clamped into
/// the hull of pixel centers first, so every weight lies in `[0, 1]`.
pub fn build_demanders_subpixel(kp: Keypoint, geometry: &GridGeometry) -> Result<DemanderSet> {
    require_visible(&kp)?;
    let kp = clamp_keypoint(kp, geometry);
    let g = geometry.pixel_size();
    let c0 = bracket(kp.x, g, geometry.width());
    let r0 = bracket(kp.y, g, geometry.height());
    let pixels = vec![(c0, r0), (c0 + 1, r0), (c0, r0 + 1), (c0 + 1, r0 + 1)];
    let locations: Vec<(f64, f64)> = pixels
        .iter()
        .map(|&(c, r)| geometry.center_unchecked(c, r))
        .collect();
    let masses = locations
        .iter()
        .map(|&(xi, yi)| {
            let wx = (g - (kp.x - xi).abs()).max(0.0);
            let wy = (g - (kp.y - yi).abs()).max(0.0);
            wx * wy / (g * g)
        })
        .collect();
    Ok(DemanderSet {
        masses,
        pixels,
        locations,
    })
}

/// One unit demander at the center of the pixel containing the dot.
pub fn build_demanders_naive(kp: Keypoint, geometry: &GridGeometry) -> Result<DemanderSet> {
    require_visible(&kp)?;
    let kp = clamp_keypoint(kp, geometry);
    let (c, r) = geometry.containing_pixel(kp.x, kp.y);
    Ok(DemanderSet {
        masses: vec![1.0],
        pixels: vec![(c, r)],
        locations: vec![geometry.center_unchecked(c, r)],
    })
}

pub fn build_demanders(
    kp: Keypoint,
    geometry: &GridGeometry,
    mode: DemanderMode,
) -> Result<DemanderSet> {
    match mode {
        DemanderMode::Subpixel => build_demanders_subpixel(kp, geometry),
        DemanderMode::Naive => build_demanders_naive(kp, geometry),
    }
}

/// Gaussian-smoothed target heatmap.
pub fn build_gaussian_heatmap(
    kp: Keypoint,
    geometry: &GridGeometry,
    spec: &GaussianSpec,
) -> Result<Heatmap> {
    require_visible(&kp)?;
    let kp = clamp_keypoint(kp, geometry);
    let (cx, cy) = match spec.convention {
        PeakConvention::PeakOne => {
            let (c, r) = geometry.containing_pixel(kp.x, kp.y);
            geometry.center_unchecked(c, r)
        }
        PeakConvention::SubpixelCentered => (kp.x, kp.y),
    };
    let denom = 2.0 * spec.sigma * spec.sigma;
    Heatmap::from_fn(*geometry, |c, r| {
        let (x, y) = geometry.center_unchecked(c, r);
        (-((x - cx).powi(2) + (y - cy).powi(2)) / denom).exp()
    })
}

/// Dot-annotated heatmap: 1 at the containing pixel, 0 elsewhere.
pub fn build_dot_heatmap(kp: Keypoint, geometry: &GridGeometry) -> Result<Heatmap> {
    require_visible(&kp)?;
    let kp = clamp_keypoint(kp, geometry);
    let (c, r) = geometry.containing_pixel(kp.x, kp.y);
    let mut h = Heatmap::zeros(*geometry);
    h.set(c, r, 1.0)?;
    Ok(h)
}
