use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::SyntheticSample;
use crate::error::{Error, Result};
use crate::grid::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// A free logit grid per sample and joint.
    DirectLogits,
    /// One tanh hidden layer from the rendered input to all K heatmaps.
    SmallModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub mode: PredictorMode,
    /// Hidden units; ignored by direct logits.
    pub model_width: usize,
    /// Expected total initial mass of each heatmap.
    pub init_scale: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Halve the learning rate and retry whenever a step would raise the loss.
    pub safeguarded: bool,
    pub record_every: usize,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self {
            mode: PredictorMode::DirectLogits,
            model_width: 32,
            init_scale: 1.0,
            learning_rate: 0.5,
            steps: 500,
            safeguarded: false,
            record_every: 1,
            seed: 0,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.mode == PredictorMode::SmallModel && self.model_width == 0 {
            return bad("model width must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be nonnegative");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.record_every == 0 {
            return bad("record_every must be positive");
        }
        Ok(())
    }
}

/// Trainable parameters stored flat so that a descent step is one axpy.
#[derive(Debug, Clone)]
pub(crate) struct Predictor {
    pub mode: PredictorMode,
    pub params: Vec<f64>,
    /// Outputs per sample: joints × heatmap pixels.
    out: usize,
    input: usize,
    hidden: usize,
}

/// Per-sample activations needed by the backward pass.
pub(crate) struct Forward {
    pub output: Vec<f64>,
    hidden: Vec<f64>,
}

impl Predictor {
    pub fn init(spec: &PredictorSpec, data: &[SyntheticSample]) -> Predictor {
        let first = &data[0];
        let n_pix = first.geometry.len();
        let out = first.gt_joints.len() * n_pix;
        let input = first.rendered_input.len();
        let mut rng = seeded_rng(spec.seed);
        let bias = |rng: &mut crate::grid::SeededRng| spec.init_scale * (0.5 + rng.gen::<f64>()) / n_pix as f64;
        match spec.mode {
            PredictorMode::DirectLogits => {
                let params = (0..data.len() * out).map(|_| bias(&mut rng)).collect();
                Predictor {
                    mode: spec.mode,
                    params,
                    out,
                    input,
                    hidden: 0,
                }
            }
            PredictorMode::SmallModel => {
                let hidden = spec.model_width;
                let w1 = Normal::new(0.0, 1.0 / (input as f64).sqrt()).expect("positive std");
                let w2 = Normal::new(0.0, spec.init_scale / (n_pix as f64 * (hidden as f64).sqrt()))
                    .expect("positive std");
                let mut params = Vec::with_capacity(hidden * (input + 1) + out * (hidden + 1));
                params.extend((0..hidden * input).map(|_| w1.sample(&mut rng)));
                params.extend(std::iter::repeat_n(0.0, hidden));
                params.extend((0..out * hidden).map(|_| w2.sample(&mut rng)));
                params.extend((0..out).map(|_| bias(&mut rng)));
                Predictor {
                    mode: spec.mode,
                    params,
                    out,
                    input,
                    hidden,
                }
            }
        }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.out * self.hidden);
        (w1, b1, w2, b2)
    }

    pub fn forward(&self, index: usize, sample: &SyntheticSample) -> Forward {
        match self.mode {
            PredictorMode::DirectLogits => Forward {
                output: self.params[index * self.out..(index + 1) * self.out].to_vec(),
                hidden: Vec::new(),
            },
            PredictorMode::SmallModel => {
                let (w1, b1, w2, b2) = self.split();
                let x = &sample.rendered_input;
                let hidden: Vec<f64> = (0..self.hidden)
                    .map(|k| {
                        let row = &w1[k * self.input..(k + 1) * self.input];
                        (b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
                    })
                    .collect();
                let output = (0..self.out)
                    .map(|o| {
                        let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                        b2[o] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>()
                    })
                    .collect();
                Forward { output, hidden }
            }
        }
    }

    /// Adds `scale · ∂(⟨d_out, output⟩)/∂θ` for the small model into `grad`.
    /// Direct logits have disjoint per-sample blocks and are handled by the
    /// caller.
    pub fn accumulate_model_grad(
        &self,
        sample: &SyntheticSample,
        fwd: &Forward,
        d_out: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(self.mode, PredictorMode::SmallModel);
        let (_, _, w2, _) = self.split();
        let (h, i) = (self.hidden, self.input);
        let (gw1, rest) = grad.split_at_mut(h * i);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(self.out * h);
        let mut d_hidden = vec![0.0; h];
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let d = d * scale;
            gb2[o] += d;
            let row = &w2[o * h..(o + 1) * h];
            let grow = &mut gw2[o * h..(o + 1) * h];
            for k in 0..h {
                grow[k] += d * fwd.hidden[k];
                d_hidden[k] += d * row[k];
            }
        }
        let x = &sample.rendered_input;
        for k in 0..h {
            let dz = d_hidden[k] * (1.0 - fwd.hidden[k] * fwd.hidden[k]);
            gb1[k] += dz;
            for (g, v) in gw1[k * i..(k + 1) * i].iter_mut().zip(x) {
                *g += dz * v;
            }
        }
    }

    pub fn outputs_per_sample(&self) -> usize {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::generate_dataset;
    use crate::grid::GridGeometry;

    #[test]
    fn model_gradient_matches_finite_differences() {
        let geom = GridGeometry::new(4, 4, 1.0, 2.0).unwrap();
        let data = generate_dataset(1, &geom, 2, 3).unwrap();
        let spec = PredictorSpec {
            mode: PredictorMode::SmallModel,
            model_width: 5,
            ..PredictorSpec::default()
        };
        let mut model = Predictor::init(&spec, &data);
        // Nonzero first-layer biases so tanh is not at its symmetric point.
        let (h, i) = (model.hidden, model.input);
        for k in 0..h {
            model.params[h * i + k] = 0.1 * k as f64 - 0.2;
        }
        let d_out: Vec<f64> = (0..model.outputs_per_sample()).map(|o| ((o * 7) % 5) as f64 - 2.0).collect();
        let objective = |m: &Predictor| -> f64 {
            m.forward(0, &data[0]).output.iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; model.params.len()];
        let fwd = model.forward(0, &data[0]);
        model.accumulate_model_grad(&data[0], &fwd, &d_out, 1.0, &mut grad);
        let step = 1e-6;
        for p in (0..model.params.len()).step_by(7) {
            let mut up = model.clone();
            up.params[p] += step;
            let mut down = model.clone();
            down.params[p] -= step;
            let fd = (objective(&up) - objective(&down)) / (2.0 * step);
            assert!((fd - grad[p]).abs() <= 1e-6 * fd.abs().max(1.0), "param {p}: {fd} vs {}", grad[p]);
        }
    }

    #[test]
    fn direct_logits_start_with_the_requested_mass() {
        let geom = GridGeometry::unit(8, 8).unwrap();
        let data = generate_dataset(50, &geom, 1, 1).unwrap();
        let spec = PredictorSpec {
            init_scale: 2.0,
            ..PredictorSpec::default()
        };
        let model = Predictor::init(&spec, &data);
        let mean_mass = model.params.iter().sum::<f64>() / data.len() as f64;
        assert!((mean_mass - 2.0).abs() < 0.05);
        assert!(model.params.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let ok = PredictorSpec::default();
        assert!(ok.validate().is_ok());
        assert!(PredictorSpec { steps: 0, ..ok }.validate().is_err());
        assert!(PredictorSpec { learning_rate: -1.0, ..ok }.validate().is_err());
        assert!(PredictorSpec { record_every: 0, ..ok }.validate().is_err());
        assert!(PredictorSpec { mode: PredictorMode::SmallModel, model_width: 0, ..ok }.validate().is_err());
    }
}
