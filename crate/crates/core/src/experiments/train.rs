use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::SyntheticSample;
use super::model::{Predictor, PredictorMode, PredictorSpec};
use crate::analysis::{decode_or_argmax, ConsistencyTrace, TracePoint};
use crate::decode::{metrics_from_errors, Decoder, LocalizationMetrics, DEFAULT_PCK_THRESHOLDS};
use crate::encode::{DemanderMode, GaussianSpec};
use crate::error::{Error, Result};
use crate::grid::{Heatmap, PoseInstance};
use crate::transport::{matching_loss, mse_loss, LossReport, MseTarget, SinkhornConfig};

/// Samples per gradient-reduction chunk. Fixed so that the summation order,
/// and therefore every bit of the result, does not depend on thread count.
const CHUNK: usize = 8;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    Matching {
        demanders: DemanderMode,
        sinkhorn: SinkhornConfig,
    },
    MseGaussian(GaussianSpec),
    MseDot,
}

impl LossSpec {
    /// Decoder a run is judged by: expectation for matching, argmax for the
    /// pixel-wise baselines.
    pub fn primary_decoder(&self) -> Decoder {
        match self {
            LossSpec::Matching { .. } => Decoder::Expectation,
            _ => Decoder::Argmax,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Matching {
                demanders: DemanderMode::Subpixel,
                ..
            } => "matching",
            LossSpec::Matching {
                demanders: DemanderMode::Naive,
                ..
            } => "matching_naive",
            LossSpec::MseGaussian(_) => "mse_gaussian",
            LossSpec::MseDot => "mse_dot",
        }
    }

    fn evaluate(&self, instance: &PoseInstance) -> Result<LossReport> {
        match self {
            LossSpec::Matching { demanders, sinkhorn } => matching_loss(instance, *demanders, sinkhorn),
            LossSpec::MseGaussian(spec) => mse_loss(instance, MseTarget::Gaussian(*spec)),
            LossSpec::MseDot => mse_loss(instance, MseTarget::Dot),
        }
    }
}

/// One recorded step with both decoders' mean errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub error_expectation: f64,
    pub error_argmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceError {
    pub instance_id: usize,
    pub joint: usize,
    pub err: f64,
    pub decoder: Decoder,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub loss: String,
    pub primary_decoder: Decoder,
    /// Final metrics under the primary decoder.
    pub final_metrics: LocalizationMetrics,
    /// Final metrics under the other decoder.
    pub secondary_metrics: LocalizationMetrics,
    pub final_loss: f64,
    /// Trace under the primary decoder.
    pub trace: ConsistencyTrace,
    pub secondary_trace: ConsistencyTrace,
    #[serde(skip)]
    pub rows: Vec<TraceRow>,
    #[serde(skip)]
    pub instance_errors: Vec<InstanceError>,
    /// Predictions after the last step, per sample and joint.
    #[serde(skip)]
    pub final_heatmaps: Vec<Vec<Heatmap>>,
    pub config_echo: serde_json::Value,
    pub wall_time: f64,
}

/// Loss, gradient and decode errors at one parameter setting.
struct Evaluation {
    loss: f64,
    grad: Vec<f64>,
    err_expectation: f64,
    err_argmax: f64,
}

struct SampleEval {
    loss: f64,
    d_out: Vec<f64>,
    err: [f64; 2],
    visible: usize,
}

fn eval_sample(
    predictor: &Predictor,
    index: usize,
    sample: &SyntheticSample,
    loss: &LossSpec,
) -> Result<(SampleEval, super::model::Forward)> {
    let fwd = predictor.forward(index, sample);
    let heatmaps = split_heatmaps(sample, &fwd.output)?;
    let mut err = [0.0; 2];
    let mut visible = 0;
    for (h, kp) in heatmaps.iter().zip(&sample.gt_joints) {
        if kp.visible {
            for (e, dec) in err.iter_mut().zip([Decoder::Expectation, Decoder::Argmax]) {
                let (x, y) = decode_or_argmax(h, dec);
                *e += kp.distance(x, y);
            }
            visible += 1;
        }
    }
    let instance = PoseInstance::new(sample.gt_joints.clone(), heatmaps)?;
    let (value, d_out) = match loss.evaluate(&instance) {
        Ok(report) => (report.total(), report.into_gradients().concat()),
        Err(Error::EmptyLoss) => (0.0, vec![0.0; fwd.output.len()]),
        Err(e) => return Err(e),
    };
    Ok((
        SampleEval {
            loss: value,
            d_out,
            err,
            visible,
        },
        fwd,
    ))
}

fn split_heatmaps(sample: &SyntheticSample, output: &[f64]) -> Result<Vec<Heatmap>> {
    let n = sample.geometry.len();
    output
        .chunks(n)
        .map(|c| Heatmap::new(sample.geometry, c.to_vec()))
        .collect()
}

/// Mean loss over samples. Direct logits descend each sample's own loss;
/// the shared model descends the mean.
fn evaluate(predictor: &Predictor, data: &[SyntheticSample], loss: &LossSpec) -> Result<Evaluation> {
    let n = data.len();
    let scale = 1.0 / n as f64;
    let chunks: Vec<(usize, &[SyntheticSample])> = data.chunks(CHUNK).enumerate().collect();
    let partial: Vec<Result<(f64, [f64; 2], usize, Vec<f64>)>> = chunks
        .par_iter()
        .map(|&(ci, chunk)| {
            let mut loss_sum = 0.0;
            let mut err = [0.0; 2];
            let mut visible = 0;
            let mut grad = match predictor.mode {
                PredictorMode::DirectLogits => Vec::with_capacity(chunk.len() * predictor.outputs_per_sample()),
                PredictorMode::SmallModel => vec![0.0; predictor.params.len()],
            };
            for (k, sample) in chunk.iter().enumerate() {
                let (ev, fwd) = eval_sample(predictor, ci * CHUNK + k, sample, loss)?;
                loss_sum += ev.loss;
                err[0] += ev.err[0];
                err[1] += ev.err[1];
                visible += ev.visible;
                match predictor.mode {
                    PredictorMode::DirectLogits => grad.extend_from_slice(&ev.d_out),
                    PredictorMode::SmallModel => {
                        predictor.accumulate_model_grad(sample, &fwd, &ev.d_out, scale, &mut grad)
                    }
                }
            }
            Ok((loss_sum, err, visible, grad))
        })
        .collect();

    let mut total = 0.0;
    let mut err = [0.0; 2];
    let mut visible = 0;
    let mut grad = match predictor.mode {
        PredictorMode::DirectLogits => Vec::with_capacity(predictor.params.len()),
        PredictorMode::SmallModel => vec![0.0; predictor.params.len()],
    };
    for part in partial {
        let (l, e, v, g) = part?;
        total += l;
        err[0] += e[0];
        err[1] += e[1];
        visible += v;
        match predictor.mode {
            PredictorMode::DirectLogits => grad.extend(g),
            PredictorMode::SmallModel => grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        }
    }
    let denom = visible.max(1) as f64;
    Ok(Evaluation {
        loss: total * scale,
        grad,
        err_expectation: err[0] / denom,
        err_argmax: err[1] / denom,
    })
}

/// Plain gradient descent. Records loss and both decoders' mean errors at
/// step 0, every `record_every` steps and the final step.
pub fn train(data: &[SyntheticSample], predictor: &PredictorSpec, loss: &LossSpec) -> Result<RunResult> {
    let start = Instant::now();
    predictor.validate()?;
    check_dataset(data)?;
    if let LossSpec::Matching { sinkhorn, .. } = loss {
        sinkhorn.validate()?;
    }
    let mut model = Predictor::init(predictor, data);
    let mut lr = predictor.learning_rate;
    let mut rows = Vec::new();

    let mut current = evaluate(&model, data, loss)?;
    if !current.loss.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    let record = |rows: &mut Vec<TraceRow>, step: usize, ev: &Evaluation| {
        rows.push(TraceRow {
            step,
            loss: ev.loss,
            error_expectation: ev.err_expectation,
            error_argmax: ev.err_argmax,
        })
    };
    for step in 0..predictor.steps {
        if step % predictor.record_every == 0 {
            record(&mut rows, step, &current);
        }
        let mut halvings = 0;
        loop {
            let mut candidate = model.clone();
            for (p, g) in candidate.params.iter_mut().zip(&current.grad) {
                *p -= lr * g;
            }
            // Overflowing outputs fail heatmap validation; that is divergence too.
            let next = match evaluate(&candidate, data, loss) {
                Ok(ev) if ev.loss.is_finite() => Some(ev),
                Ok(_) | Err(Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            };
            let improves = next.as_ref().is_some_and(|ev| ev.loss <= current.loss);
            if predictor.safeguarded && !improves {
                halvings += 1;
                lr *= 0.5;
                if halvings > MAX_HALVINGS {
                    // Stationary to working precision; stay put.
                    break;
                }
                continue;
            }
            let Some(next) = next else {
                return Err(Error::Divergence { step: step + 1 });
            };
            model = candidate;
            current = next;
            break;
        }
    }
    record(&mut rows, predictor.steps, &current);

    let primary = loss.primary_decoder();
    let secondary = match primary {
        Decoder::Expectation => Decoder::Argmax,
        Decoder::Argmax => Decoder::Expectation,
    };
    let (final_metrics, mut instance_errors) = decode_metrics(&model, data, primary)?;
    let (secondary_metrics, more) = decode_metrics(&model, data, secondary)?;
    instance_errors.extend(more);
    let final_heatmaps = data
        .iter()
        .enumerate()
        .map(|(i, s)| split_heatmaps(s, &model.forward(i, s).output))
        .collect::<Result<Vec<_>>>()?;

    let trace_for = |dec: Decoder| {
        ConsistencyTrace::from_points(
            rows.iter()
                .map(|r| TracePoint {
                    step: r.step,
                    loss: r.loss,
                    error: match dec {
                        Decoder::Expectation => r.error_expectation,
                        Decoder::Argmax => r.error_argmax,
                    },
                })
                .collect(),
        )
    };
    Ok(RunResult {
        loss: loss.name().to_string(),
        primary_decoder: primary,
        final_metrics,
        secondary_metrics,
        final_loss: current.loss,
        trace: trace_for(primary),
        secondary_trace: trace_for(secondary),
        rows,
        instance_errors,
        final_heatmaps,
        config_echo: serde_json::json!({
            "predictor": predictor,
            "loss": loss,
            "n": data.len(),
            "geometry": data[0].geometry,
        }),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn check_dataset(data: &[SyntheticSample]) -> Result<()> {
    let first = data.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    if data
        .iter()
        .any(|s| s.geometry != first.geometry || s.gt_joints.len() != first.gt_joints.len() || s.rendered_input.len() != first.rendered_input.len())
    {
        return Err(Error::ShapeMismatch("dataset samples differ in shape".into()));
    }
    Ok(())
}

fn decode_metrics(
    model: &Predictor,
    data: &[SyntheticSample],
    decoder: Decoder,
) -> Result<(LocalizationMetrics, Vec<InstanceError>)> {
    let k = data[0].gt_joints.len();
    let mut per_joint = vec![(0.0, 0usize); k];
    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for (i, sample) in data.iter().enumerate() {
        let heatmaps = split_heatmaps(sample, &model.forward(i, sample).output)?;
        for (j, (h, kp)) in heatmaps.iter().zip(&sample.gt_joints).enumerate() {
            if !kp.visible {
                continue;
            }
            let (x, y) = decode_or_argmax(h, decoder);
            let err = kp.distance(x, y);
            per_joint[j].0 += err;
            per_joint[j].1 += 1;
            errors.push(err);
            rows.push(InstanceError {
                instance_id: i,
                joint: j,
                err,
                decoder,
            });
        }
    }
    Ok((metrics_from_errors(&errors, &per_joint, &DEFAULT_PCK_THRESHOLDS)?, rows))
}
