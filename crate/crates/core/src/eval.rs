//! Classification metrics and batched inference over tuple lists.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{EncoderInputs, Model, ModelError, Prediction};
use crate::rng::rng_from;
use crate::tamper::{exchange_timestamp, TamperError};
use crate::types::{ConsistencyPrediction, Label, Sample, Timestamp, VerificationTuple};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no predictions to score")]
    Empty,
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("ROC needs both classes; all labels are {0:?}")]
    SingleClass(Label),
}

/// Decision threshold on `p_inconsistent`.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Predicted inconsistent when `p_inconsistent >= threshold` (ties go to
/// inconsistent).
pub fn classify(p_inconsistent: f64, threshold: f64) -> Label {
    if p_inconsistent >= threshold {
        Label::Inconsistent
    } else {
        Label::Consistent
    }
}

/// Fraction of scores (`p_inconsistent`) whose thresholded class equals the label.
pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    let hits = scores.iter().zip(labels).filter(|(s, l)| classify(**s, threshold) == **l).count();
    Ok(hits as f64 / scores.len() as f64)
}

fn check_lengths(scores: &[f64], labels: &[Label]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// ROC curve with the inconsistent class as positive and `p_inconsistent`
/// as the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweep thresholds over the distinct scores, highest first. Tied scores
/// form one step, so the trapezoid area equals
/// `P(pos > neg) + ½ P(pos = neg)`.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<RocCurve, MetricError> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|l| **l == Label::Inconsistent).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(MetricError::SingleClass(Label::Consistent));
    }
    if neg == 0 {
        return Err(MetricError::SingleClass(Label::Inconsistent));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0));
    // integrate in integer counts so the area is exact up to one division
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == Label::Inconsistent {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp0) * (tp + tp0)) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    pub count: usize,
}

pub fn metrics(preds: &[ConsistencyPrediction], labels: &[Label]) -> Result<Metrics, MetricError> {
    let scores: Vec<f64> = preds.iter().map(|p| p.p_inconsistent()).collect();
    Ok(Metrics {
        accuracy: accuracy(&scores, labels, DEFAULT_THRESHOLD)?,
        auc: roc_auc(&scores, labels)?.auc,
        count: scores.len(),
    })
}

/// Samples encoded per inference chunk.
pub const INFERENCE_CHUNK: usize = 64;

/// Inference over arbitrary tuples. Each referenced sample is encoded once,
/// and every alleged time comes from one encoding of the 288-cell grid.
pub fn predict_tuples(model: &Model, samples: &[Sample], tuples: &[VerificationTuple]) -> Result<Vec<Prediction>, ModelError> {
    let grid: Vec<Timestamp> = Timestamp::all().collect();
    let tf = model.encode_times(&grid);
    let mut by_sample: Vec<Vec<usize>> = alloc::vec![Vec::new(); samples.len()];
    for (j, t) in tuples.iter().enumerate() {
        if t.sample >= samples.len() {
            return Err(ModelError::TupleIndex {
                index: t.sample,
                count: samples.len(),
            });
        }
        by_sample[t.sample].push(j);
    }
    let used: Vec<usize> = (0..samples.len()).filter(|&i| !by_sample[i].is_empty()).collect();
    let mut out: Vec<Option<Prediction>> = alloc::vec![None; tuples.len()];
    for chunk in used.chunks(INFERENCE_CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let sf = model.encode_samples(&EncoderInputs::new(&refs, model.config().image_size)?);
        let mut pairs = Vec::new();
        let mut slots = Vec::new();
        for (local, &si) in chunk.iter().enumerate() {
            for &j in &by_sample[si] {
                pairs.push((local, tuples[j].alleged.index()));
                slots.push(j);
            }
        }
        for (j, p) in slots.into_iter().zip(model.predict_encoded(&sf, &tf, grid.len(), &pairs)) {
            out[j] = Some(p);
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every tuple predicted")).collect())
}

/// Consistency probabilities only.
pub fn predict_consistency(model: &Model, samples: &[Sample], tuples: &[VerificationTuple]) -> Result<Vec<ConsistencyPrediction>, ModelError> {
    Ok(predict_tuples(model, samples, tuples)?.into_iter().map(|p| p.consistency).collect())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tamper(#[from] TamperError),
}

/// One consistent tuple per sample followed by one exchange-tampered tuple
/// per sample, drawing alleged times from the samples' own timestamps.
pub fn exchange_tuples(samples: &[Sample], seed: u64) -> Result<Vec<VerificationTuple>, TamperError> {
    let pool: Vec<Timestamp> = samples.iter().map(|s| s.timestamp).collect();
    let mut rng = rng_from(&[seed, 0xE7A1]);
    let mut tuples: Vec<VerificationTuple> = (0..samples.len()).map(|i| VerificationTuple::consistent(i, samples)).collect();
    for i in 0..samples.len() {
        tuples.push(VerificationTuple {
            sample: i,
            alleged: exchange_timestamp(samples[i].timestamp, &pool, &mut rng)?,
            label: Label::Inconsistent,
        });
    }
    Ok(tuples)
}

pub fn evaluate(model: &Model, samples: &[Sample], tuples: &[VerificationTuple]) -> Result<Metrics, EvalError> {
    let preds = predict_consistency(model, samples, tuples)?;
    let labels: Vec<Label> = tuples.iter().map(|t| t.label).collect();
    Ok(metrics(&preds, &labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&b| if b == 1 { Label::Inconsistent } else { Label::Consistent }).collect()
    }

    /// Pairwise oracle: P(pos > neg) + ½ P(pos = neg).
    fn brute_auc(scores: &[f64], l: &[Label]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, a) in scores.iter().enumerate() {
            for (j, b) in scores.iter().enumerate() {
                if l[i] == Label::Inconsistent && l[j] == Label::Consistent {
                    den += 1.0;
                    num += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &labels(&[1, 0]), 0.5), Ok(1.0));
        let a = accuracy(&[0.9, 0.2, 0.6], &labels(&[1, 0, 0]), 0.5).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        let inv = accuracy(&[0.9, 0.2, 0.6], &labels(&[0, 1, 1]), 0.5).unwrap();
        assert!((inv - (1.0 - a)).abs() < 1e-15);
        // tie at the threshold counts as inconsistent
        assert_eq!(accuracy(&[0.5], &labels(&[1]), 0.5), Ok(1.0));
        assert_eq!(accuracy(&[], &[], 0.5), Err(MetricError::Empty));
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.1, 0.85];
        let l = labels(&[1, 1, 0, 0]);
        assert!((brute_auc(&s, &l) - 0.75).abs() < 1e-15);
        assert!((roc_auc(&s, &l).unwrap().auc - 0.75).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &l).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &l).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[0.3, 0.4], &labels(&[1, 1])), Err(MetricError::SingleClass(Label::Inconsistent)));
    }

    #[test]
    fn roc_points_are_monotone_and_span_unit_square() {
        let mut r = rng_from(&[8]);
        let s: Vec<f64> = (0..50).map(|_| (r.random_range(0..10) as f64) / 10.0).collect();
        let l: Vec<Label> = (0..50).map(|i| if i % 3 == 0 { Label::Inconsistent } else { Label::Consistent }).collect();
        let c = roc_auc(&s, &l).unwrap();
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        for w in c.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        let trap: f64 = c.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((trap - c.auc).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..200),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 19.0).collect();
            let mut l: Vec<Label> = raw.iter().map(|(_, b)| if *b { Label::Inconsistent } else { Label::Consistent }).collect();
            l[0] = Label::Inconsistent;
            l[1] = Label::Consistent;
            let got = roc_auc(&scores, &l).unwrap().auc;
            prop_assert!((got - brute_auc(&scores, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn exchange_tuples_are_balanced_and_valid() {
        let data = crate::world::generate_dataset(2, 10, 3, 4);
        let t = exchange_tuples(&data, 1).unwrap();
        assert_eq!(t.len(), 40);
        assert_eq!(t.iter().filter(|x| x.label == Label::Inconsistent).count(), 20);
        for x in &t {
            assert_eq!(x.label == Label::Consistent, x.alleged == data[x.sample].timestamp);
        }
    }
}
