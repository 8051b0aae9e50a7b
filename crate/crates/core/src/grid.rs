//! Grid geometry, heatmaps, keypoints and seeded randomness.
//!
//! Pixel `(col, row)` has its center at `(col * g, row * g)`: the origin is the
//! top-left pixel center and the hull of valid dot positions is
//! `[0, (W-1) g] x [0, (H-1) g]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator used by every randomized procedure.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape and spacing of a heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    width: usize,
    height: usize,
    pixel_size: f64,
    image_scale: f64,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, pixel_size: f64, image_scale: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGeometry(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        if !(image_scale.is_finite() && image_scale >= 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "image scale must be >= 1, got {image_scale}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_size,
            image_scale,
        })
    }

    /// Unit pixel size, heatmap at input resolution.
    pub fn unit(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, 1.0, 1.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn image_scale(&self) -> f64 {
        self.image_scale
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_image_scale(&self, image_scale: f64) -> Result<Self> {
        Self::new(self.width, self.height, self.pixel_size, image_scale)
    }

    /// Largest valid x coordinate (center of the last column).
    pub fn max_x(&self) -> f64 {
        (self.width - 1) as f64 * self.pixel_size
    }

    pub fn max_y(&self) -> f64 {
        (self.height - 1) as f64 * self.pixel_size
    }

    /// Row-major flat index of `(col, row)`.
    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// Inverse of [`GridGeometry::index`].
    #[inline]
    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> Result<(f64, f64)> {
        if col >= self.width || row >= self.height {
            return Err(Error::IndexOutOfRange {
                col,
                row,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.center_unchecked(col, row))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, col: usize, row: usize) -> (f64, f64) {
        (col as f64 * self.pixel_size, row as f64 * self.pixel_size)
    }

    /// Centers of all pixels in row-major order.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        (0..self.len())
            .map(|n| {
                let (c, r) = self.col_row(n);
                self.center_unchecked(c, r)
            })
            .collect()
    }

    /// Index of the pixel containing `(x, y)`: the nearest center, with
    /// half-pixel ties resolved toward the smaller index.
    pub fn containing_pixel(&self, x: f64, y: f64) -> (usize, usize) {
        let pick = |v: f64, n: usize| -> usize {
            let t = (v / self.pixel_size - 0.5).ceil();
            t.clamp(0.0, (n - 1) as f64) as usize
        };
        (pick(x, self.width), pick(y, self.height))
    }

    /// Heatmap coordinate to input-image coordinate.
    pub fn to_image(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.image_scale, y * self.image_scale)
    }

    /// Input-image coordinate to heatmap coordinate.
    pub fn from_image(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.image_scale, y / self.image_scale)
    }
}

/// A dot annotation (or decoded location) in heatmap coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            visible: true,
        }
    }

    pub fn hidden(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            visible: false,
        }
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Clamps a keypoint into the hull of pixel centers. Visibility is preserved.
pub fn clamp_keypoint(kp: Keypoint, geometry: &GridGeometry) -> Keypoint {
    Keypoint {
        x: kp.x.clamp(0.0, geometry.max_x()),
        y: kp.y.clamp(0.0, geometry.max_y()),
        visible: kp.visible,
    }
}

/// A grid of raw model outputs (or a constructed target), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for {}x{} grid, got {}",
                geometry.len(),
                geometry.height(),
                geometry.width(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    /// Builds a heatmap from a function of `(col, row)`.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let values = (0..geometry.len())
            .map(|n| {
                let (c, r) = geometry.col_row(n);
                f(c, r)
            })
            .collect();
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.geometry.index(col, row)]
    }

    /// Writes one entry. Non-finite values are rejected.
    pub fn set(&mut self, col: usize, row: usize, value: f64) -> Result<()> {
        if col >= self.geometry.width() || row >= self.geometry.height() {
            return Err(Error::IndexOutOfRange {
                col,
                row,
                width: self.geometry.width(),
                height: self.geometry.height(),
            });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(self.geometry.index(col, row)));
        }
        let i = self.geometry.index(col, row);
        self.values[i] = value;
        Ok(())
    }

    pub fn dot(&self, other: &Heatmap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn squared_distance(&self, other: &Heatmap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Heatmap> {
        Heatmap::new(self.geometry, self.values.iter().map(|v| v * factor).collect())
    }
}

/// Keypoints of one person together with one heatmap per joint.
#[derive(Debug, Clone)]
pub struct PoseInstance {
    joints: Vec<Keypoint>,
    heatmaps: Vec<Heatmap>,
}

impl PoseInstance {
    pub fn new(joints: Vec<Keypoint>, heatmaps: Vec<Heatmap>) -> Result<Self> {
        if joints.len() != heatmaps.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} joints but {} heatmaps",
                joints.len(),
                heatmaps.len()
            )));
        }
        if let Some(first) = heatmaps.first() {
            if heatmaps.iter().any(|h| h.geometry() != first.geometry()) {
                return Err(Error::ShapeMismatch(
                    "heatmaps of one instance must share a geometry".into(),
                ));
            }
        }
        Ok(Self { joints, heatmaps })
    }

    pub fn joints(&self) -> &[Keypoint] {
        &self.joints
    }

    pub fn heatmaps(&self) -> &[Heatmap] {
        &self.heatmaps
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_centers() {
        let g1 = GridGeometry::unit(8, 8).unwrap();
        assert_eq!(g1.pixel_center(0, 0).unwrap(), (0.0, 0.0));
        assert_eq!(g1.pixel_center(3, 5).unwrap(), (3.0, 5.0));
        let g2 = GridGeometry::new(8, 8, 2.0, 1.0).unwrap();
        assert_eq!(g2.pixel_center(1, 1).unwrap(), (2.0, 2.0));
        assert!(matches!(
            g1.pixel_center(8, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn pixel_center_is_injective() {
        let g = GridGeometry::new(5, 7, 0.5, 1.0).unwrap();
        let mut centers: Vec<(i64, i64)> = g
            .centers()
            .iter()
            .map(|&(x, y)| ((x * 1e6) as i64, (y * 1e6) as i64))
            .collect();
        centers.sort_unstable();
        centers.dedup();
        assert_eq!(centers.len(), g.len());
    }

    #[test]
    fn clamp_examples() {
        let g = GridGeometry::unit(8, 8).unwrap();
        assert_eq!(clamp_keypoint(Keypoint::new(-0.3, 2.0), &g), Keypoint::new(0.0, 2.0));
        assert_eq!(clamp_keypoint(Keypoint::new(7.6, 7.6), &g), Keypoint::new(7.0, 7.0));
        assert_eq!(clamp_keypoint(Keypoint::new(3.25, 4.75), &g), Keypoint::new(3.25, 4.75));
        let hidden = clamp_keypoint(Keypoint::hidden(9.0, -1.0), &g);
        assert!(!hidden.visible);
    }

    #[test]
    fn geometry_validation() {
        assert!(GridGeometry::unit(1, 8).is_err());
        assert!(GridGeometry::new(4, 4, 0.0, 1.0).is_err());
        assert!(GridGeometry::new(4, 4, 1.0, 0.5).is_err());
    }

    #[test]
    fn heatmap_rejects_nan() {
        let g = GridGeometry::unit(2, 2).unwrap();
        assert!(matches!(
            Heatmap::new(g, vec![0.0, f64::NAN, 1.0, 2.0]),
            Err(Error::NonFinite(1))
        ));
        assert!(Heatmap::new(g, vec![0.0; 3]).is_err());
    }

    #[test]
    fn containing_pixel_ties_go_low() {
        let g = GridGeometry::unit(8, 8).unwrap();
        assert_eq!(g.containing_pixel(1.25, 2.25), (1, 2));
        assert_eq!(g.containing_pixel(1.75, 2.25), (2, 2));
        assert_eq!(g.containing_pixel(1.5, 2.5), (1, 2));
        assert_eq!(g.containing_pixel(0.0, 7.0), (0, 7));
    }

    #[test]
    fn pose_instance_checks_lengths() {
        let g = GridGeometry::unit(3, 3).unwrap();
        assert!(PoseInstance::new(vec![Keypoint::new(1.0, 1.0)], vec![]).is_err());
        let other = GridGeometry::unit(4, 3).unwrap();
        assert!(PoseInstance::new(
            vec![Keypoint::new(1.0, 1.0), Keypoint::new(1.0, 1.0)],
            vec![Heatmap::zeros(g), Heatmap::zeros(other)]
        )
        .is_err());
    }
}
