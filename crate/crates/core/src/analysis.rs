//! Risk decomposition of pixel-wise MSE and the loss/error consistency of
//! training traces.

use serde::{Deserialize, Serialize};

use crate::decode::{decode_argmax, decode_expectation, Decoder};
use crate::encode::{GaussianSpec, PeakConvention};
use crate::error::{Error, Result};
use crate::grid::{clamp_keypoint, GridGeometry, Heatmap, Keypoint};
use crate::transport::{mse_loss, MseTarget};

/// One joint's predicted, Gaussian-target and dot-target heatmaps.
#[derive(Debug, Clone)]
pub struct DecompositionSample {
    pub predicted: Heatmap,
    pub gaussian: Heatmap,
    pub convention: PeakConvention,
    pub dot: Heatmap,
}

/// Both sides of
/// `R_dot = R_gau + 2 E⟨P, G⟩ − 2 E⟨P, D⟩ − E‖G − D‖²`
/// as empirical means over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub risk_gaussian: f64,
    pub constant_c: f64,
    pub inner_gau: f64,
    pub inner_dot: f64,
    pub convention: PeakConvention,
    pub samples: usize,
}

/// Evaluates both sides of the decomposition. The identity is exact when
/// `⟨G, D⟩ = ‖D‖²`, which the peak-one convention guarantees; under the
/// sub-pixel-centered convention the residual is reported as is.
pub fn verify_decomposition(batch: &[DecompositionSample]) -> Result<DecompositionReport> {
    let first = batch
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty decomposition batch".into()))?;
    if batch.iter().any(|s| s.convention != first.convention) {
        return Err(Error::MixedConvention);
    }
    let geom = first.predicted.geometry();
    for s in batch {
        if s.predicted.geometry() != geom || s.gaussian.geometry() != geom || s.dot.geometry() != geom {
            return Err(Error::ShapeMismatch("decomposition samples must share a geometry".into()));
        }
    }
    let n = batch.len() as f64;
    let mean = |f: &dyn Fn(&DecompositionSample) -> f64| batch.iter().map(f).sum::<f64>() / n;
    let lhs = mean(&|s| s.predicted.squared_distance(&s.dot));
    let risk_gaussian = mean(&|s| s.predicted.squared_distance(&s.gaussian));
    let inner_gau = mean(&|s| s.predicted.dot(&s.gaussian));
    let inner_dot = mean(&|s| s.predicted.dot(&s.dot));
    let constant_c = mean(&|s| s.gaussian.squared_distance(&s.dot));
    let rhs = risk_gaussian + 2.0 * inner_gau - 2.0 * inner_dot - constant_c;
    Ok(DecompositionReport {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        risk_gaussian,
        constant_c,
        inner_gau,
        inner_dot,
        convention: first.convention,
        samples: batch.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub error: f64,
}

/// Loss and localization error over training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTrace {
    pub steps: Vec<TracePoint>,
    /// Fraction of consecutive records where the loss strictly fell while the
    /// error strictly rose.
    pub inconsistency_rate: f64,
}

impl ConsistencyTrace {
    /// Records must be in step order.
    pub fn from_points(steps: Vec<TracePoint>) -> Self {
        let pairs = steps.len().saturating_sub(1);
        let bad = steps
            .windows(2)
            .filter(|w| w[1].loss < w[0].loss && w[1].error > w[0].error)
            .count();
        let inconsistency_rate = if pairs == 0 {
            0.0
        } else {
            bad as f64 / pairs as f64
        };
        Self {
            steps,
            inconsistency_rate,
        }
    }
}

/// One recorded training state.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub step: usize,
    pub loss: f64,
    /// Heatmaps per instance.
    pub heatmaps: Vec<Vec<Heatmap>>,
    pub ground_truth: Vec<Vec<Keypoint>>,
}

/// Decodes every recorded state and builds the trace from mean decode errors.
/// The expectation decoder falls back to argmax on degenerate heatmaps.
pub fn trace_consistency(run: &[TraceStep], decoder: Decoder) -> ConsistencyTrace {
    let points = run
        .iter()
        .map(|s| TracePoint {
            step: s.step,
            loss: s.loss,
            error: mean_error(&s.heatmaps, &s.ground_truth, decoder),
        })
        .collect();
    ConsistencyTrace::from_points(points)
}

pub(crate) fn decode_or_argmax(h: &Heatmap, decoder: Decoder) -> (f64, f64) {
    match decoder {
        Decoder::Argmax => decode_argmax(h),
        Decoder::Expectation => decode_expectation(h)
            .map(|d| (d.x, d.y))
            .unwrap_or_else(|_| decode_argmax(h)),
    }
}

fn mean_error(heatmaps: &[Vec<Heatmap>], gt: &[Vec<Keypoint>], decoder: Decoder) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (hs, kps) in heatmaps.iter().zip(gt) {
        for (h, kp) in hs.iter().zip(kps) {
            if kp.visible {
                let (x, y) = decode_or_argmax(h, decoder);
                sum += kp.distance(x, y);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Two predictions where the pixel-wise loss prefers the one that localizes
/// the joint worse.
#[derive(Debug, Clone, Serialize)]
pub struct MisleadingPair {
    #[serde(skip)]
    pub located: Heatmap,
    #[serde(skip)]
    pub offset: Heatmap,
    /// Width of the correctly located blob (0 for a single-pixel dot).
    pub located_sigma: f64,
    pub offset_pixels: (i64, i64),
    pub offset_amplitude: f64,
    pub mse_located: f64,
    pub mse_offset: f64,
    pub error_located: f64,
    pub error_offset: f64,
}

/// Searches for a pair `(#1, #2)`: `#1` peaks (value 1) at the dot pixel but
/// has the wrong width; `#2` has the target width but sits at least `2σ`
/// away. Succeeds when `MSE(#2) < MSE(#1)` and `err(#2) > err(#1)` under
/// argmax decoding. Both unit-sigma and shifted candidates are enumerated in
/// a fixed order, so the result is deterministic.
pub fn fig1_witness(geometry: &GridGeometry, kp: Keypoint, spec: &GaussianSpec) -> Result<MisleadingPair> {
    if !kp.visible {
        return Err(Error::InvisibleJoint);
    }
    let kp = clamp_keypoint(kp, geometry);
    let (pc, pr) = geometry.containing_pixel(kp.x, kp.y);
    let g = geometry.pixel_size();
    let sigma = spec.sigma;
    let target_spec = GaussianSpec::new(sigma, PeakConvention::PeakOne)?;
    let target = MseTarget::Gaussian(target_spec);

    let blob = |cc: f64, cr: f64, width: f64, amp: f64| -> Result<Heatmap> {
        Heatmap::from_fn(*geometry, |c, r| {
            let d2 = (c as f64 - cc).powi(2) + (r as f64 - cr).powi(2);
            if width == 0.0 {
                if d2 == 0.0 {
                    amp
                } else {
                    0.0
                }
            } else {
                amp * (-(d2 * g * g) / (2.0 * width * width)).exp()
            }
        })
    };
    let mse = |h: &Heatmap| -> Result<f64> {
        let inst = crate::grid::PoseInstance::new(vec![kp], vec![h.clone()])?;
        Ok(mse_loss(&inst, target)?.total())
    };
    let error = |h: &Heatmap| {
        let (x, y) = decode_argmax(h);
        kp.distance(x, y)
    };

    let mut located = Vec::new();
    for width in [0.0, 0.25 * sigma, 0.5 * sigma, 2.0 * sigma, 3.0 * sigma, 4.0 * sigma] {
        let h = blob(pc as f64, pr as f64, width, 1.0)?;
        located.push((width, mse(&h)?, error(&h), h));
    }

    let min_shift = ((2.0 * sigma / g).ceil() as i64).max(1);
    let mut offsets = Vec::new();
    for dist in min_shift..min_shift + 4 {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)] {
            offsets.push((dx * dist, dy * dist));
        }
    }
    let mut tried = 0;
    for &(dx, dy) in &offsets {
        let (cc, cr) = (pc as i64 + dx, pr as i64 + dy);
        if cc < 0 || cr < 0 || cc >= geometry.width() as i64 || cr >= geometry.height() as i64 {
            continue;
        }
        for step in (1..=20).rev() {
            let amp = step as f64 * 0.05;
            let h2 = blob(cc as f64, cr as f64, sigma, amp)?;
            let (mse2, err2) = (mse(&h2)?, error(&h2));
            for (width, mse1, err1, h1) in &located {
                tried += 1;
                if mse2 < *mse1 && err2 > *err1 {
                    return Ok(MisleadingPair {
                        located: h1.clone(),
                        offset: h2,
                        located_sigma: *width,
                        offset_pixels: (dx, dy),
                        offset_amplitude: amp,
                        mse_located: *mse1,
                        mse_offset: mse2,
                        error_located: *err1,
                        error_offset: err2,
                    });
                }
            }
        }
    }
    Err(Error::WitnessNotFound(tried))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{build_dot_heatmap, build_gaussian_heatmap};
    use crate::grid::seeded_rng;
    use rand::Rng;

    fn sample(kp: Keypoint, geom: &GridGeometry, pred: Heatmap, conv: PeakConvention) -> DecompositionSample {
        let spec = GaussianSpec::new(2.0, conv).unwrap();
        DecompositionSample {
            predicted: pred,
            gaussian: build_gaussian_heatmap(kp, geom, &spec).unwrap(),
            convention: conv,
            dot: build_dot_heatmap(kp, geom).unwrap(),
        }
    }

    #[test]
    fn predicted_equals_gaussian() {
        let geom = GridGeometry::unit(16, 16).unwrap();
        let mut rng = seeded_rng(3);
        let batch: Vec<_> = (0..20)
            .map(|_| {
                let kp = Keypoint::new(rng.gen_range(0.0..15.0), rng.gen_range(0.0..15.0));
                let s = sample(kp, &geom, Heatmap::zeros(geom), PeakConvention::PeakOne);
                DecompositionSample {
                    predicted: s.gaussian.clone(),
                    ..s
                }
            })
            .collect();
        let r = verify_decomposition(&batch).unwrap();
        assert!(r.residual <= 1e-9);
        assert!((r.lhs - r.constant_c).abs() <= 1e-9);
    }

    #[test]
    fn predicted_equals_dot() {
        let geom = GridGeometry::unit(16, 16).unwrap();
        let kp = Keypoint::new(4.3, 9.8);
        let s = sample(kp, &geom, Heatmap::zeros(geom), PeakConvention::PeakOne);
        let s = DecompositionSample {
            predicted: s.dot.clone(),
            ..s
        };
        let r = verify_decomposition(&[s]).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.residual <= 1e-9);
    }

    #[test]
    fn subpixel_convention_exposes_residual() {
        let geom = GridGeometry::unit(16, 16).unwrap();
        let kp = Keypoint::new(4.3, 9.8);
        let pred = Heatmap::new(geom, vec![0.1; 256]).unwrap();
        let r = verify_decomposition(&[sample(kp, &geom, pred, PeakConvention::SubpixelCentered)]).unwrap();
        assert!(r.residual > 1e-3);
    }

    #[test]
    fn mixed_conventions_rejected() {
        let geom = GridGeometry::unit(8, 8).unwrap();
        let kp = Keypoint::new(3.3, 3.3);
        let a = sample(kp, &geom, Heatmap::zeros(geom), PeakConvention::PeakOne);
        let b = sample(kp, &geom, Heatmap::zeros(geom), PeakConvention::SubpixelCentered);
        assert!(matches!(verify_decomposition(&[a, b]), Err(Error::MixedConvention)));
    }

    #[test]
    fn trace_rates() {
        let pts = |v: &[(f64, f64)]| {
            v.iter()
                .enumerate()
                .map(|(i, &(loss, error))| TracePoint { step: i, loss, error })
                .collect::<Vec<_>>()
        };
        let good = ConsistencyTrace::from_points(pts(&[(3.0, 2.0), (2.0, 1.5), (1.0, 1.0)]));
        assert_eq!(good.inconsistency_rate, 0.0);
        let bad = ConsistencyTrace::from_points(pts(&[(3.0, 1.0), (2.0, 1.5)]));
        assert_eq!(bad.inconsistency_rate, 1.0);
        let flat = ConsistencyTrace::from_points(pts(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]));
        assert_eq!(flat.inconsistency_rate, 0.0);

        let mut reindexed = pts(&[(3.0, 1.0), (2.0, 1.5), (1.0, 1.7), (0.5, 1.0)]);
        let base = ConsistencyTrace::from_points(reindexed.clone()).inconsistency_rate;
        for (i, p) in reindexed.iter_mut().enumerate() {
            p.step = 10 * i + 3;
        }
        assert_eq!(ConsistencyTrace::from_points(reindexed).inconsistency_rate, base);
    }

    #[test]
    fn witness_for_sigma_two() {
        let geom = GridGeometry::unit(32, 32).unwrap();
        let kp = Keypoint::new(15.3, 16.2);
        let w = fig1_witness(&geom, kp, &GaussianSpec::default()).unwrap();
        assert!(w.mse_offset < w.mse_located);
        assert!(w.error_offset > w.error_located);
        let (dx, dy) = w.offset_pixels;
        assert!(((dx * dx + dy * dy) as f64).sqrt() >= 4.0);
    }

    #[test]
    fn no_witness_for_dot_like_target() {
        let geom = GridGeometry::unit(32, 32).unwrap();
        let spec = GaussianSpec::new(0.05, PeakConvention::PeakOne).unwrap();
        assert!(matches!(
            fig1_witness(&geom, Keypoint::new(10.0, 10.0), &spec),
            Err(Error::WitnessNotFound(_))
        ));
    }
}
