//! Coordinate decoders and desk-scale localization metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Heatmap, Keypoint};

/// Default PCK thresholds, in heatmap pixels.
pub const DEFAULT_PCK_THRESHOLDS: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Normalized mean of the heaviest 2x2 window.
    Expectation,
    /// Center of the largest pixel.
    Argmax,
}

impl Decoder {
    pub fn name(&self) -> &'static str {
        match self {
            Decoder::Expectation => "expectation",
            Decoder::Argmax => "argmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationDecode {
    pub x: f64,
    pub y: f64,
    /// `(col, row)` of the top-left pixel of the chosen window.
    pub window: (usize, usize),
}

/// Picks the 2x2 window with the largest relu-sum (ties: smallest row, then
/// smallest column), normalizes its four values to unit mass and returns the
/// mass-weighted mean of their pixel centers.
pub fn decode_expectation(h: &Heatmap) -> Result<ExpectationDecode> {
    let geom = h.geometry();
    let relu = |c, r| h.get(c, r).max(0.0);
    let mut best = (0.0, (0, 0));
    for r in 0..geom.height() - 1 {
        for c in 0..geom.width() - 1 {
            let s = relu(c, r) + relu(c + 1, r) + relu(c, r + 1) + relu(c + 1, r + 1);
            if s > best.0 {
                best = (s, (c, r));
            }
        }
    }
    let (sum, (c0, r0)) = best;
    if sum <= 0.0 {
        return Err(Error::DegenerateDecode);
    }
    let g = geom.pixel_size();
    let (mut x, mut y) = (0.0, 0.0);
    for (dc, dr) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let w = relu(c0 + dc, r0 + dr) / sum;
        x += w * (c0 + dc) as f64 * g;
        y += w * (r0 + dr) as f64 * g;
    }
    Ok(ExpectationDecode {
        x,
        y,
        window: (c0, r0),
    })
}

/// Center of the maximal pixel; the first in row-major order on ties.
pub fn decode_argmax(h: &Heatmap) -> (f64, f64) {
    let mut best = 0;
    for (i, v) in h.values().iter().enumerate() {
        if *v > h.values()[best] {
            best = i;
        }
    }
    let (c, r) = h.geometry().col_row(best);
    let g = h.geometry().pixel_size();
    (c as f64 * g, r as f64 * g)
}

/// Decoded locations of every joint of one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodedPose {
    pub coords: Vec<(f64, f64)>,
    pub image_coords: Vec<(f64, f64)>,
    /// Window (expectation) or pixel (argmax) the coordinate came from.
    pub window_origin: Vec<(usize, usize)>,
    pub decoder: Decoder,
}

/// Decodes each heatmap. For the expectation decoder, degenerate heatmaps
/// are an error.
pub fn decode_pose(heatmaps: &[Heatmap], decoder: Decoder) -> Result<DecodedPose> {
    let mut coords = Vec::with_capacity(heatmaps.len());
    let mut image_coords = Vec::with_capacity(heatmaps.len());
    let mut window_origin = Vec::with_capacity(heatmaps.len());
    for h in heatmaps {
        let (xy, origin) = match decoder {
            Decoder::Expectation => {
                let d = decode_expectation(h)?;
                ((d.x, d.y), d.window)
            }
            Decoder::Argmax => {
                let (x, y) = decode_argmax(h);
                let g = h.geometry().pixel_size();
                ((x, y), ((x / g).round() as usize, (y / g).round() as usize))
            }
        };
        coords.push(xy);
        image_coords.push(h.geometry().to_image(xy.0, xy.1));
        window_origin.push(origin);
    }
    Ok(DecodedPose {
        coords,
        image_coords,
        window_origin,
        decoder,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PckPoint {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    /// Euclidean error per joint; `None` for joints never visible.
    pub per_joint_error: Vec<Option<f64>>,
    pub mean_error: f64,
    pub pck: Vec<PckPoint>,
    pub count: usize,
}

impl LocalizationMetrics {
    pub fn pck_at(&self, threshold: f64) -> Option<f64> {
        self.pck
            .iter()
            .find(|p| p.threshold == threshold)
            .map(|p| p.fraction)
    }
}

/// Errors on visible joints of one instance.
pub fn evaluate(decoded: &DecodedPose, gt: &[Keypoint], thresholds: &[f64]) -> Result<LocalizationMetrics> {
    evaluate_batch(std::slice::from_ref(decoded), &[gt.to_vec()], thresholds)
}

/// Pools errors over many instances. `per_joint_error` averages each joint
/// index over the instances where it is visible.
pub fn evaluate_batch(
    decoded: &[DecodedPose],
    gt: &[Vec<Keypoint>],
    thresholds: &[f64],
) -> Result<LocalizationMetrics> {
    if decoded.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} decoded instances vs {} ground truths",
            decoded.len(),
            gt.len()
        )));
    }
    let k = gt.iter().map(Vec::len).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); k];
    let mut errors = Vec::new();
    for (pose, joints) in decoded.iter().zip(gt) {
        if pose.coords.len() != joints.len() {
            return Err(Error::ShapeMismatch("decoded and ground-truth joint counts differ".into()));
        }
        for (j, (kp, &(x, y))) in joints.iter().zip(&pose.coords).enumerate() {
            if kp.visible {
                let e = kp.distance(x, y);
                sums[j].0 += e;
                sums[j].1 += 1;
                errors.push(e);
            }
        }
    }
    metrics_from_errors(&errors, &sums, thresholds)
}

pub(crate) fn metrics_from_errors(
    errors: &[f64],
    per_joint: &[(f64, usize)],
    thresholds: &[f64],
) -> Result<LocalizationMetrics> {
    if errors.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let count = errors.len();
    let pck = thresholds
        .iter()
        .map(|&t| PckPoint {
            threshold: t,
            fraction: errors.iter().filter(|&&e| e <= t).count() as f64 / count as f64,
        })
        .collect();
    Ok(LocalizationMetrics {
        per_joint_error: per_joint
            .iter()
            .map(|&(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
        mean_error: errors.iter().sum::<f64>() / count as f64,
        pck,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{build_demanders_subpixel, build_gaussian_heatmap, GaussianSpec, PeakConvention};
    use crate::grid::GridGeometry;

    fn grid() -> GridGeometry {
        GridGeometry::unit(8, 8).unwrap()
    }

    #[test]
    fn expectation_inverts_subpixel_demanders() {
        let g = grid();
        let h = build_demanders_subpixel(Keypoint::new(1.25, 2.25), &g).unwrap().to_heatmap(&g);
        let d = decode_expectation(&h).unwrap();
        assert_eq!((d.x, d.y), (1.25, 2.25));
        assert_eq!(d.window, (1, 2));
    }

    #[test]
    fn expectation_point_mass_tie_break() {
        let mut h = Heatmap::zeros(grid());
        h.set(3, 5, 1.0).unwrap();
        let d = decode_expectation(&h).unwrap();
        assert_eq!((d.x, d.y), (3.0, 5.0));
        assert_eq!(d.window, (2, 4));
    }

    #[test]
    fn expectation_ignores_negatives_and_rejects_degenerate() {
        let g = grid();
        let mut h = Heatmap::new(g, vec![-1.0; 64]).unwrap();
        assert!(matches!(decode_expectation(&h), Err(Error::DegenerateDecode)));
        h.set(4, 4, 3.0).unwrap();
        h.set(5, 4, 1.0).unwrap();
        let d = decode_expectation(&h).unwrap();
        assert!((d.x - 4.25).abs() < 1e-15 && (d.y - 4.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_examples() {
        let g = grid();
        let mut h = Heatmap::zeros(g);
        h.set(3, 5, 2.0).unwrap();
        assert_eq!(decode_argmax(&h), (3.0, 5.0));
        assert_eq!(decode_argmax(&Heatmap::new(g, vec![0.7; 64]).unwrap()), (0.0, 0.0));

        let kp = Keypoint::new(1.25, 2.25);
        let spec = GaussianSpec::new(2.0, PeakConvention::PeakOne).unwrap();
        let gau = build_gaussian_heatmap(kp, &g, &spec).unwrap();
        let (x, y) = decode_argmax(&gau);
        assert_eq!((x, y), (1.0, 2.0));
        assert!((kp.distance(x, y) - 0.353_553_390_593_273_8).abs() < 1e-15);
    }

    #[test]
    fn evaluation() {
        let gt = vec![Keypoint::new(1.0, 1.0), Keypoint::new(4.0, 4.0), Keypoint::hidden(0.0, 0.0)];
        let decoded = DecodedPose {
            coords: vec![(1.0, 1.0), (7.0, 8.0), (5.0, 5.0)],
            image_coords: vec![],
            window_origin: vec![],
            decoder: Decoder::Argmax,
        };
        let m = evaluate(&decoded, &gt, &DEFAULT_PCK_THRESHOLDS).unwrap();
        assert_eq!(m.per_joint_error, vec![Some(0.0), Some(5.0), None]);
        assert_eq!(m.mean_error, 2.5);
        assert_eq!(m.pck_at(0.1), Some(0.5));
        let fractions: Vec<f64> = m.pck.iter().map(|p| p.fraction).collect();
        assert!(fractions.windows(2).all(|w| w[0] <= w[1]));

        let none = vec![Keypoint::hidden(0.0, 0.0); 3];
        assert!(matches!(
            evaluate(&decoded, &none, &DEFAULT_PCK_THRESHOLDS),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn perfect_decode_scores_one() {
        let gt = vec![Keypoint::new(2.5, 3.5)];
        let decoded = DecodedPose {
            coords: vec![(2.5, 3.5)],
            image_coords: vec![],
            window_origin: vec![],
            decoder: Decoder::Expectation,
        };
        let m = evaluate(&decoded, &gt, &DEFAULT_PCK_THRESHOLDS).unwrap();
        assert_eq!(m.mean_error, 0.0);
        assert!(m.pck.iter().all(|p| p.fraction == 1.0));
    }

    #[test]
    fn pose_decoding_reports_image_coords() {
        let g = GridGeometry::new(8, 8, 1.0, 4.0).unwrap();
        let h = build_demanders_subpixel(Keypoint::new(2.5, 6.75), &g).unwrap().to_heatmap(&g);
        let pose = decode_pose(&[h], Decoder::Expectation).unwrap();
        assert_eq!(pose.coords, vec![(2.5, 6.75)]);
        assert_eq!(pose.image_coords, vec![(10.0, 27.0)]);
    }
}
