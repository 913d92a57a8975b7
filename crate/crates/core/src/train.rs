//! Losses, gradient checking and the optimization loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::eval::{evaluate, EvalError, Metrics};
use crate::math::sigmoid;
use crate::model::{EncoderInputs, Model, ModelError, OutputGrads, RawOutputs};
use crate::nn::{Adam, AdamConfig, ParamKind};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::tamper::{augment_locations, exchange_timestamp, sample_subtle_tamper, JitterSchedule, TamperError, TileSource};
use crate::types::{ConsistencyPrediction, Label, Sample, Timestamp, VerificationTuple};

/// Probability clamp inside the logarithm of the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Cross-entropy of `p_inconsistent` against the label.
pub fn bce_loss(y: ConsistencyPrediction, label: Label) -> f64 {
    let p = y.p_inconsistent().clamp(BCE_EPS, 1.0 - BCE_EPS);
    let t = label.as_f64();
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("attribute vectors have lengths {0} and {1}")]
pub struct ArityError(pub usize, pub usize);

/// Mean squared error between two attribute vectors.
pub fn mse_loss(a: &[f64], target: &[f64]) -> Result<f64, ArityError> {
    if a.len() != target.len() || a.is_empty() {
        return Err(ArityError(a.len(), target.len()));
    }
    Ok(a.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    /// Cross-entropy only.
    pub fn consistency_only() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }
}

/// Loss components; `total = α·ce + β·mse_ground + γ·mse_sat`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mse_ground: f64,
    pub mse_sat: f64,
    pub total: f64,
}

/// Targets of a training batch: per tuple the sample index and label, per
/// sample the oracle attributes.
#[derive(Debug, Clone, Copy)]
pub struct BatchTargets<'a> {
    pub sample_idx: &'a [usize],
    pub labels: &'a [Label],
    pub attributes: &'a [&'a [f64]],
}

/// Joint loss over raw network outputs and its gradient with respect to
/// them. Attribute terms average over consistent tuples only and vanish when
/// the batch has none or the model has no attribute branches.
pub fn loss_and_grads(out: &RawOutputs, t: &BatchTargets<'_>, w: LossWeights) -> (LossBreakdown, OutputGrads) {
    let nt = t.labels.len();
    let nu = t.attributes.len();
    let mut grads = OutputGrads {
        logits: vec![0.0; 2 * nt],
        attr_ground: out.attr_ground.as_ref().map(|_| vec![0.0; out.attr_ground.as_ref().unwrap().len()]),
        attr_sat: out.attr_sat.as_ref().map(|_| vec![0.0; out.attr_sat.as_ref().unwrap().len()]),
    };
    let mut b = LossBreakdown::default();
    for j in 0..nt {
        let (z0, z1) = (out.logits[j], out.logits[nt + j]);
        let pred = ConsistencyPrediction::from_logits(z0, z1);
        b.ce += bce_loss(pred, t.labels[j]);
        let p = pred.p_inconsistent();
        if p > BCE_EPS && p < 1.0 - BCE_EPS {
            let g = w.alpha * (p - t.labels[j].as_f64()) / nt as f64;
            grads.logits[j] = -g;
            grads.logits[nt + j] = g;
        }
    }
    b.ce /= nt as f64;

    let real: Vec<usize> = (0..nt).filter(|&j| t.labels[j] == Label::Consistent).collect();
    let n0 = real.len() as f64;
    let mse_term = |logits: &[f64], grad: &mut [f64], cols: usize, col_of: &dyn Fn(usize) -> usize, weight: f64| -> f64 {
        let a = logits.len() / cols;
        let mut total = 0.0;
        for &j in &real {
            let c = col_of(j);
            let target = t.attributes[t.sample_idx[j]];
            let mut l = 0.0;
            for k in 0..a {
                let s = sigmoid(logits[k * cols + c]);
                let d = s - target[k];
                l += d * d;
                grad[k * cols + c] += weight / n0 * 2.0 * d / a as f64 * s * (1.0 - s);
            }
            total += l / a as f64;
        }
        total / n0
    };
    if !real.is_empty() {
        if let (Some(z), Some(g)) = (out.attr_ground.as_ref(), grads.attr_ground.as_mut()) {
            b.mse_ground = mse_term(z, g, nu, &|j| t.sample_idx[j], w.beta);
        }
        if let (Some(z), Some(g)) = (out.attr_sat.as_ref(), grads.attr_sat.as_mut()) {
            b.mse_sat = mse_term(z, g, nt, &|j| j, w.gamma);
        }
    }
    b.total = w.alpha * b.ce + w.beta * b.mse_ground + w.gamma * b.mse_sat;
    (b, grads)
}

/// The joint loss alone.
pub fn total_loss(out: &RawOutputs, t: &BatchTargets<'_>, w: LossWeights) -> LossBreakdown {
    loss_and_grads(out, t, w).0
}

/// `λ Σ w²` over weight matrices and kernels.
pub fn l2_penalty(model: &Model, lambda: f64) -> f64 {
    lambda
        * model
            .params()
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(_, p)| p.value.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
}

fn add_l2_grad(model: &mut Model, lambda: f64) {
    for (_, p) in model.params_mut() {
        if p.kind == ParamKind::Weight {
            for (g, v) in p.grad.iter_mut().zip(&p.value) {
                *g += 2.0 * lambda * v;
            }
        }
    }
}

/// A prepared batch: unique samples, tuples over them, and targets.
pub struct PreparedBatch<'a> {
    pub inputs: EncoderInputs,
    pub tuples: Vec<(usize, Timestamp)>,
    pub labels: Vec<Label>,
    pub attributes: Vec<&'a [f64]>,
}

impl<'a> PreparedBatch<'a> {
    pub fn new(samples: &[&'a Sample], tuples: Vec<(usize, Timestamp, Label)>, image_size: usize) -> Result<Self, ModelError> {
        Ok(Self {
            inputs: EncoderInputs::new(samples, image_size)?,
            labels: tuples.iter().map(|t| t.2).collect(),
            tuples: tuples.iter().map(|t| (t.0, t.1)).collect(),
            attributes: samples.iter().map(|s| s.attributes.values()).collect(),
        })
    }

    pub fn targets(&self, idx: &'a [usize]) -> BatchTargets<'_> {
        BatchTargets {
            sample_idx: idx,
            labels: &self.labels,
            attributes: &self.attributes,
        }
    }
}

/// Forward, loss (plus L2) and backward on one batch; gradients accumulate
/// into the model. Returns the loss breakdown without the penalty.
pub fn forward_backward(model: &mut Model, batch: &PreparedBatch<'_>, w: LossWeights, l2_lambda: f64) -> Result<LossBreakdown, ModelError> {
    let out = model.forward_train(&batch.inputs, &batch.tuples)?;
    let idx: Vec<usize> = batch.tuples.iter().map(|t| t.0).collect();
    let (loss, grads) = loss_and_grads(&out, &batch.targets(&idx), w);
    model.backward(&grads);
    if l2_lambda > 0.0 {
        add_l2_grad(model, l2_lambda);
    }
    Ok(loss)
}

/// Objective value (joint loss plus L2) in training mode, without gradients.
pub fn objective(model: &mut Model, batch: &PreparedBatch<'_>, w: LossWeights, l2_lambda: f64) -> Result<f64, ModelError> {
    let out = model.forward_train(&batch.inputs, &batch.tuples)?;
    let idx: Vec<usize> = batch.tuples.iter().map(|t| t.0).collect();
    let loss = total_loss(&out, &batch.targets(&idx), w).total;
    model.backward(&OutputGrads {
        logits: vec![0.0; out.logits.len()],
        attr_ground: out.attr_ground.map(|v| vec![0.0; v.len()]),
        attr_sat: out.attr_sat.map(|v| vec![0.0; v.len()]),
    });
    Ok(loss + l2_penalty(model, l2_lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
}

/// Floor of the relative-error denominator, so entries whose analytic and
/// numeric gradients are both negligible are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare the analytic gradient of the objective with central differences
/// of step `h` for every trainable scalar. Relative error is
/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn gradient_check(model: &mut Model, batch: &PreparedBatch<'_>, w: LossWeights, l2_lambda: f64, h: f64) -> Result<GradCheckReport, ModelError> {
    model.zero_grad();
    forward_backward(model, batch, w, l2_lambda)?;
    let analytic: Vec<(String, Vec<f64>, bool)> = model.params().into_iter().map(|(n, p)| (n, p.grad.clone(), p.trainable())).collect();
    let mut report = GradCheckReport {
        parameters: 0,
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
    };
    for (pi, (name, grad, trainable)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        for k in 0..grad.len() {
            let orig = model.params()[pi].1.value[k];
            model.params_mut()[pi].1.value[k] = orig + h;
            let up = objective(model, batch, w, l2_lambda)?;
            model.params_mut()[pi].1.value[k] = orig - h;
            let down = objective(model, batch, w, l2_lambda)?;
            model.params_mut()[pi].1.value[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.parameters += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperMode {
    /// Alleged time from a random training sample.
    Exchange,
    /// Month and hour each shifted by ±1 or ±2.
    Subtle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperSchedule {
    /// Draw a fresh tampered time for every sample in every epoch.
    PerEpoch,
    /// Draw once before the first epoch and reuse.
    Once,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Tuples per batch; half consistent, half tampered.
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub seed: u64,
    pub tamper_mode: TamperMode,
    pub tamper_schedule: TamperSchedule,
    pub location_augmentation: Option<JitterSchedule>,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 30,
            l2_lambda: 0.001,
            seed: 0,
            tamper_mode: TamperMode::Exchange,
            tamper_schedule: TamperSchedule::PerEpoch,
            location_augmentation: None,
            loss_weights: LossWeights::default(),
        }
    }

    /// Learning rate 1e-5, for pretrained-scale backbones.
    pub fn paper() -> Self {
        Self {
            learning_rate: 1e-5,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptySplit,
    #[error("batch size must be an even number of at least 2, got {0}")]
    BatchSize(usize),
    #[error("loss diverged at epoch {epoch}, batch {batch}: {loss:?}")]
    Diverged { epoch: usize, batch: usize, loss: LossBreakdown },
    #[error("location augmentation needs a tile source")]
    NoTileSource,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tamper(#[from] TamperError),
    #[error("validation failed: {0}")]
    Eval(String),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(format!("{e}"))
    }
}

/// Held-out tuples evaluated after every epoch.
pub struct Validation<'a> {
    pub samples: &'a [Sample],
    pub tuples: &'a [VerificationTuple],
}

fn tampered(mode: TamperMode, truth: Timestamp, pool: &[Timestamp], rng: &mut Rng) -> Result<Timestamp, TamperError> {
    match mode {
        TamperMode::Exchange => exchange_timestamp(truth, pool, rng),
        TamperMode::Subtle => Ok(sample_subtle_tamper(truth, rng)),
    }
}

/// Train `model` in place. Each epoch visits every sample once in shuffled
/// order; a batch holds `batch_size / 2` samples, each paired with its true
/// time (consistent) and a tampered time (inconsistent). `on_epoch` sees the
/// log of every finished epoch together with the model as trained so far.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
    tiles: Option<&dyn TileSource>,
    mut on_epoch: impl FnMut(&EpochLog, &Model),
) -> Result<Vec<EpochLog>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    if cfg.batch_size < 2 || cfg.batch_size % 2 != 0 {
        return Err(TrainError::BatchSize(cfg.batch_size));
    }
    if cfg.location_augmentation.is_some() && tiles.is_none() {
        return Err(TrainError::NoTileSource);
    }
    let size = model.config().image_size;
    let pool: Vec<Timestamp> = samples.iter().map(|s| s.timestamp).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = rng_from(&[cfg.seed, 0x7A1CE]);
    let mut fixed: Option<Vec<Timestamp>> = None;
    if cfg.tamper_schedule == TamperSchedule::Once {
        let mut v = Vec::with_capacity(samples.len());
        for s in samples {
            v.push(tampered(cfg.tamper_mode, s.timestamp, &pool, &mut rng)?);
        }
        fixed = Some(v);
    }
    let half = cfg.batch_size / 2;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(half).enumerate() {
            let mut tuples = Vec::with_capacity(2 * chunk.len());
            for (u, &i) in chunk.iter().enumerate() {
                tuples.push((u, samples[i].timestamp, Label::Consistent));
            }
            for (u, &i) in chunk.iter().enumerate() {
                let alleged = match &fixed {
                    Some(v) => v[i],
                    None => tampered(cfg.tamper_mode, samples[i].timestamp, &pool, &mut rng)?,
                };
                tuples.push((u, alleged, Label::Inconsistent));
            }
            let augmented: Vec<Sample>;
            let refs: Vec<&Sample> = match (&cfg.location_augmentation, tiles) {
                (Some(schedule), Some(tiles)) => {
                    let mut owned: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                    let mut arng = rng_from(&[derive_seed(&[cfg.seed, epoch as u64, bi as u64]), 0xA06]);
                    augment_locations(&mut owned, schedule, tiles, &mut arng);
                    augmented = owned;
                    augmented.iter().collect()
                }
                _ => chunk.iter().map(|&i| &samples[i]).collect(),
            };
            let batch = PreparedBatch::new(&refs, tuples, size)?;
            model.zero_grad();
            let loss = forward_backward(model, &batch, cfg.loss_weights, cfg.l2_lambda)?;
            if !loss.total.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi, loss });
            }
            adam.update(model.params_mut().into_iter().map(|(_, p)| p));
            loss_sum += loss.total;
            batches += 1;
        }
        let val = match &validation {
            Some(v) => Some(evaluate(model, v.samples, v.tuples)?),
            None => None,
        };
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val,
        };
        on_epoch(&log, model);
        logs.push(log);
    }
    Ok(logs)
}

/// Continue training with subtle (±1/±2) tampering.
pub fn finetune_subtle(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    epochs: usize,
    validation: Option<Validation<'_>>,
    on_epoch: impl FnMut(&EpochLog, &Model),
) -> Result<Vec<EpochLog>, TrainError> {
    let cfg = TrainConfig {
        epochs,
        tamper_mode: TamperMode::Subtle,
        seed: derive_seed(&[cfg.seed, 0x5B7]),
        ..cfg.clone()
    };
    if epochs == 0 {
        return Ok(Vec::new());
    }
    train(model, samples, &cfg, validation, None, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::world::generate_dataset;

    fn pred(p1: f64) -> ConsistencyPrediction {
        ConsistencyPrediction { p: [1.0 - p1, p1] }
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(pred(0.5), Label::Inconsistent) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(pred(1.0 - BCE_EPS), Label::Inconsistent) < 1e-6);
        assert!((bce_loss(pred(BCE_EPS), Label::Inconsistent) - 16.118_095_650_958_32).abs() < 1e-9);
        assert!((bce_loss(pred(0.0), Label::Inconsistent) - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        let a = [0.3; 40];
        assert_eq!(mse_loss(&a, &a), Ok(0.0));
        assert_eq!(mse_loss(&[0.0; 40], &[1.0; 40]), Ok(1.0));
        let mut b = a;
        b[7] += 0.5;
        assert!((mse_loss(&a, &b).unwrap() - 0.00625).abs() < 1e-15);
        assert_eq!(mse_loss(&a, &[0.0; 39]), Err(ArityError(40, 39)));
    }

    fn raw(nu: usize, nt: usize, seed: u64) -> RawOutputs {
        let mut r = rng_from(&[seed]);
        use rand::Rng;
        let mut v = |n: usize| (0..n).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        RawOutputs {
            logits: v(2 * nt),
            attr_ground: Some(v(40 * nu)),
            attr_sat: Some(v(40 * nt)),
        }
    }

    #[test]
    fn loss_decomposition_and_masking() {
        let out = raw(2, 4, 1);
        let targets_a: Vec<Vec<f64>> = (0..2).map(|i| vec![0.1 * i as f64; 40]).collect();
        let refs: Vec<&[f64]> = targets_a.iter().map(|v| v.as_slice()).collect();
        let idx = [0, 1, 0, 1];
        let labels = [Label::Consistent, Label::Inconsistent, Label::Inconsistent, Label::Inconsistent];
        let t = BatchTargets {
            sample_idx: &idx,
            labels: &labels,
            attributes: &refs,
        };
        let full = total_loss(&out, &t, LossWeights::default());
        let ce_only = total_loss(&out, &t, LossWeights::consistency_only());
        let mean_bce: f64 = (0..4)
            .map(|j| bce_loss(ConsistencyPrediction::from_logits(out.logits[j], out.logits[4 + j]), labels[j]))
            .sum::<f64>()
            / 4.0;
        assert_eq!(ce_only.total, mean_bce);
        assert!(full.total > ce_only.total);

        // only tuple 0 is consistent; it uses sample 0, so sample 1's
        // targets are only seen by inconsistent tuples
        let altered: Vec<Vec<f64>> = vec![targets_a[0].clone(), vec![0.9; 40]];
        let refs2: Vec<&[f64]> = altered.iter().map(|v| v.as_slice()).collect();
        let t2 = BatchTargets { attributes: &refs2, ..t };
        assert_eq!(total_loss(&out, &t2, LossWeights::default()), full);

        let all_fake = [Label::Inconsistent; 4];
        let t3 = BatchTargets { labels: &all_fake, ..t };
        let l3 = total_loss(&out, &t3, LossWeights::default());
        assert_eq!(l3.total, l3.ce);
    }

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let targets = [vec![0.5; 40]];
        let refs: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
        let out = RawOutputs {
            logits: vec![30.0, -30.0, -30.0, 30.0],
            attr_ground: Some(vec![0.0; 40]),
            attr_sat: Some(vec![0.0; 80]),
        };
        let t = BatchTargets {
            sample_idx: &[0, 0],
            labels: &[Label::Consistent, Label::Inconsistent],
            attributes: &refs,
        };
        assert!(total_loss(&out, &t, LossWeights::default()).total < 1e-6);
    }

    fn mini_batch<'a>(data: &'a [Sample]) -> PreparedBatch<'a> {
        let refs: Vec<&Sample> = data.iter().collect();
        let mut tuples: Vec<(usize, Timestamp, Label)> = (0..data.len()).map(|i| (i, data[i].timestamp, Label::Consistent)).collect();
        for i in 0..data.len() {
            tuples.push((i, data[(i + 1) % data.len()].timestamp.shifted(1, 3), Label::Inconsistent));
        }
        PreparedBatch::new(&refs, tuples, 8).unwrap()
    }

    #[test]
    fn l2_penalty_is_linear_in_lambda() {
        let model = Model::new(ModelConfig::miniature()).unwrap();
        let p1 = l2_penalty(&model, 0.001);
        assert!(p1 > 0.0);
        assert!((l2_penalty(&model, 0.002) - 2.0 * p1).abs() < 1e-15);
        let data = generate_dataset(2, 2, 5, 8);
        let batch = mini_batch(&data);
        let mut m = model.clone();
        let base = objective(&mut m, &batch, LossWeights::default(), 0.0).unwrap();
        let with = objective(&mut m, &batch, LossWeights::default(), 0.001).unwrap();
        let with2 = objective(&mut m, &batch, LossWeights::default(), 0.002).unwrap();
        assert!(((with2 - base) - 2.0 * (with - base)).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = generate_dataset(2, 2, 5, 8);
        let batch = mini_batch(&data);
        for modalities in ["G,t", "G,t,l,S"] {
            let mut model = Model::new(ModelConfig {
                modalities: modalities.parse().unwrap(),
                seed: 9,
                ..ModelConfig::miniature()
            })
            .unwrap();
            let r = gradient_check(&mut model, &batch, LossWeights::default(), 0.001, 1e-6).unwrap();
            assert!(r.max_rel_error < 1e-3, "{modalities}: {r:?}");
            assert!(r.parameters > 100);
        }
    }

    #[test]
    fn training_is_deterministic_and_balanced() {
        let data = generate_dataset(2, 6, 5, 8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::desk()
        };
        let run = || {
            let mut m = Model::new(ModelConfig::miniature()).unwrap();
            let logs = train(&mut m, &data, &cfg, None, None, |_, _| {}).unwrap();
            (m.weights(), logs)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 2);
    }

    #[test]
    fn finetune_with_zero_epochs_is_identity() {
        let data = generate_dataset(2, 4, 6, 8);
        let mut m = Model::new(ModelConfig::miniature()).unwrap();
        let before = m.weights();
        finetune_subtle(&mut m, &data, &TrainConfig::desk(), 0, None, |_, _| {}).unwrap();
        assert_eq!(m.weights(), before);
        finetune_subtle(&mut m, &data, &TrainConfig { batch_size: 4, ..TrainConfig::desk() }, 1, None, |_, _| {}).unwrap();
        assert_ne!(m.weights(), before);
    }

    #[test]
    fn error_cases() {
        let mut m = Model::new(ModelConfig::miniature()).unwrap();
        assert_eq!(train(&mut m, &[], &TrainConfig::desk(), None, None, |_, _| {}), Err(TrainError::EmptySplit));
        let data = generate_dataset(1, 2, 6, 8);
        let cfg = TrainConfig {
            location_augmentation: Some(JitterSchedule::standard()),
            ..TrainConfig::desk()
        };
        assert_eq!(train(&mut m, &data, &cfg, None, None, |_, _| {}), Err(TrainError::NoTileSource));
    }
}
