use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{clamp_keypoint, seeded_rng, GridGeometry, Keypoint};

/// Disc radius in input pixels per unit of image scale.
pub const DISC_RADIUS: f64 = 1.5;
pub const NOISE_STD: f64 = 0.05;

/// One synthetic image: a noisy disc per joint, rendered at input
/// resolution, with sub-pixel ground truth in heatmap coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSample {
    pub geometry: GridGeometry,
    /// One `(r·H) × (r·W)` row-major channel per joint, concatenated.
    pub rendered_input: Vec<f64>,
    pub gt_joints: Vec<Keypoint>,
    pub seed: u64,
}

impl SyntheticSample {
    pub fn input_width(&self) -> usize {
        input_side(self.geometry.width(), self.geometry.image_scale())
    }

    pub fn input_height(&self) -> usize {
        input_side(self.geometry.height(), self.geometry.image_scale())
    }

    pub fn channel(&self, joint: usize) -> &[f64] {
        let len = self.input_width() * self.input_height();
        &self.rendered_input[joint * len..(joint + 1) * len]
    }
}

fn input_side(n: usize, scale: f64) -> usize {
    (n as f64 * scale).round() as usize
}

/// Draws `n` samples with `joints` keypoints each. Per-sample seeds come
/// from one master stream, so sample `i` depends only on `(seed, i)`.
pub fn generate_dataset(
    n: usize,
    geometry: &GridGeometry,
    joints: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if n == 0 || joints == 0 {
        return Err(Error::Config("dataset needs n >= 1 and K >= 1".into()));
    }
    let mut master = seeded_rng(seed);
    (0..n)
        .map(|_| master.next_u64())
        .collect::<Vec<_>>()
        .into_iter()
        .map(|s| generate_sample(geometry, joints, s))
        .collect()
}

pub fn generate_sample(geometry: &GridGeometry, joints: usize, seed: u64) -> Result<SyntheticSample> {
    let mut rng = seeded_rng(seed);
    let gt_joints: Vec<Keypoint> = (0..joints)
        .map(|_| {
            let x = rng.gen::<f64>() * geometry.max_x();
            let y = rng.gen::<f64>() * geometry.max_y();
            clamp_keypoint(Keypoint::new(x, y), geometry)
        })
        .collect();

    let r = geometry.image_scale();
    let g = geometry.pixel_size();
    let (iw, ih) = (input_side(geometry.width(), r), input_side(geometry.height(), r));
    let radius = DISC_RADIUS * r * g;
    let noise = Normal::new(0.0, NOISE_STD).expect("constant std is valid");
    let mut rendered_input = Vec::with_capacity(joints * iw * ih);
    for kp in &gt_joints {
        let (cx, cy) = geometry.to_image(kp.x, kp.y);
        for row in 0..ih {
            for col in 0..iw {
                let (px, py) = (col as f64 * g, row as f64 * g);
                let inside = (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius;
                let v = if inside { 1.0 } else { 0.0 };
                rendered_input.push(v + noise.sample(&mut rng));
            }
        }
    }
    Ok(SyntheticSample {
        geometry: *geometry,
        rendered_input,
        gt_joints,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let geom = GridGeometry::new(8, 8, 1.0, 2.0).unwrap();
        let a = generate_dataset(5, &geom, 3, 11).unwrap();
        let b = generate_dataset(5, &geom, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(5, &geom, 3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_disc() {
        let geom = GridGeometry::new(8, 8, 1.0, 2.0).unwrap();
        let s = &generate_dataset(1, &geom, 1, 5).unwrap()[0];
        assert_eq!(s.rendered_input.len(), 16 * 16);
        let lit: Vec<usize> = (0..256).filter(|&i| s.rendered_input[i] > 0.5).collect();
        assert!(!lit.is_empty());
        let (cx, cy) = geom.to_image(s.gt_joints[0].x, s.gt_joints[0].y);
        // Every bright pixel lies within the single disc.
        for i in lit {
            let (c, r) = ((i % 16) as f64, (i / 16) as f64);
            assert!(((c - cx).powi(2) + (r - cy).powi(2)).sqrt() <= 3.0 + 1e-9);
        }
    }

    #[test]
    fn joints_cover_hull() {
        let geom = GridGeometry::unit(8, 6).unwrap();
        let data = generate_dataset(10_000, &geom, 1, 7).unwrap();
        let n = data.len() as f64;
        let (mx, my) = data.iter().fold((0.0, 0.0), |(x, y), s| (x + s.gt_joints[0].x, y + s.gt_joints[0].y));
        // Uniform on [0, L]: mean L/2, std L/√12.
        for (mean, len) in [(mx / n, geom.max_x()), (my / n, geom.max_y())] {
            let se = len / 12f64.sqrt() / n.sqrt();
            assert!((mean - len / 2.0).abs() < 3.0 * se, "mean {mean} len {len}");
        }
    }
}
