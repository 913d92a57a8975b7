//! Sensitivity studies: shift grids, location noise, consistency curves and
//! time-estimation heatmaps.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::eval::{classify, evaluate, predict_consistency, EvalError, Metrics, DEFAULT_THRESHOLD};
use crate::model::{EncoderInputs, Model, ModelError};
use crate::rng::rng_from;
use crate::tamper::{draw_jitter, tamper_grid, ShiftPair, TileSource};
use crate::types::{jitter_location, Label, Sample, Timestamp, VerificationTuple};
use crate::world::{daylight_from_elevation, render_ground, render_satellite, sun_elevation, CameraSpec};

/// Detection rate of one `(Δmonth, Δhour)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub months: u32,
    pub hours: u32,
    pub rate: f64,
    /// Tampered tuples evaluated: samples × distinct variants.
    pub count: usize,
}

/// Detection rates over a range of shift pairs; the unshifted cell is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionGrid {
    pub months: Vec<u32>,
    pub hours: Vec<u32>,
    pub cells: Vec<GridCell>,
}

impl DetectionGrid {
    pub fn cell(&self, months: u32, hours: u32) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.months == months && c.hours == hours)
    }

    /// Mean rate over cells whose shifts both lie in `set`.
    pub fn mean_rate_over(&self, set: &[u32]) -> Option<f64> {
        let v: Vec<f64> = self.cells.iter().filter(|c| set.contains(&c.months) && set.contains(&c.hours)).map(|c| c.rate).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Spearman correlation between `Δm + Δh` and the detection rate.
    pub fn difficulty_correlation(&self) -> f64 {
        let x: Vec<f64> = self.cells.iter().map(|c| (c.months + c.hours) as f64).collect();
        let y: Vec<f64> = self.cells.iter().map(|c| c.rate).collect();
        spearman(&x, &y)
    }
}

/// Tamper every sample with every variant of every shift pair in the ranges
/// and record the fraction classified inconsistent.
pub fn shift_grid_eval(
    model: &Model,
    samples: &[Sample],
    months: RangeInclusive<u32>,
    hours: RangeInclusive<u32>,
) -> Result<DetectionGrid, ModelError> {
    let months: Vec<u32> = months.collect();
    let hours: Vec<u32> = hours.collect();
    let mut tuples = Vec::new();
    let mut spans = Vec::new();
    for &m in &months {
        for &h in &hours {
            let s = ShiftPair::new(m, h);
            if s.is_zero() {
                continue;
            }
            let start = tuples.len();
            for (i, smp) in samples.iter().enumerate() {
                for alleged in tamper_grid(smp.timestamp, s) {
                    tuples.push(VerificationTuple {
                        sample: i,
                        alleged,
                        label: Label::Inconsistent,
                    });
                }
            }
            spans.push((m, h, start, tuples.len()));
        }
    }
    let preds = predict_consistency(model, samples, &tuples)?;
    let cells = spans
        .into_iter()
        .map(|(m, h, a, b)| {
            let detected = preds[a..b].iter().filter(|p| classify(p.p_inconsistent(), DEFAULT_THRESHOLD) == Label::Inconsistent).count();
            GridCell {
                months: m,
                hours: h,
                rate: if b > a { detected as f64 / (b - a) as f64 } else { 0.0 },
                count: b - a,
            }
        })
        .collect();
    Ok(DetectionGrid { months, hours, cells })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationNoiseRow {
    pub delta: f64,
    pub metrics: Metrics,
}

/// Copies of `samples` with each location moved by `delta` degrees along a
/// seeded random axis and sign, and the satellite tile re-rendered there.
/// `delta = 0` returns the samples unchanged.
pub fn jitter_samples(samples: &[Sample], delta: f64, tiles: &dyn TileSource, seed: u64) -> Vec<Sample> {
    if delta == 0.0 {
        return samples.to_vec();
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng_from(&[seed, 0x10C, i as u64]);
            let (axis, sign, _) = draw_jitter(&[delta], &mut r);
            let mut out = s.clone();
            out.location = jitter_location(s.location, delta, axis, sign).expect("nonnegative delta");
            out.satellite = Arc::new(tiles.tile(out.location, s.satellite.height()));
            out
        })
        .collect()
}

/// Accuracy and AUC of `tuples` after perturbing every sample's location by
/// each `delta` in turn.
pub fn location_noise_eval(
    model: &Model,
    samples: &[Sample],
    tuples: &[VerificationTuple],
    deltas: &[f64],
    tiles: &dyn TileSource,
    seed: u64,
) -> Result<Vec<LocationNoiseRow>, EvalError> {
    deltas
        .iter()
        .map(|&delta| {
            let noisy = jitter_samples(samples, delta, tiles, seed);
            Ok(LocationNoiseRow {
                delta,
                metrics: evaluate(model, &noisy, tuples)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// All 24 hours at the alleged month.
    Hour,
    /// All 12 months at the alleged hour.
    Month,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub axis: SweepAxis,
    pub alleged: Timestamp,
    /// `(capture time of the rendered scene, p_consistent)`.
    pub points: Vec<(Timestamp, f64)>,
}

impl ConsistencyCurve {
    pub fn argmax(&self) -> Timestamp {
        self.points.iter().max_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty curve").0
    }
}

/// Render the camera's scene at every point of the sweep and score each
/// rendering against the fixed alleged time.
pub fn consistency_curve(model: &Model, cam: &CameraSpec, alleged: Timestamp, axis: SweepAxis, sample_seed: u64) -> Result<ConsistencyCurve, ModelError> {
    let times: Vec<Timestamp> = match axis {
        SweepAxis::Hour => (0..24).map(|h| Timestamp::new(alleged.month(), h).expect("valid")).collect(),
        SweepAxis::Month => (1..=12).map(|m| Timestamp::new(m, alleged.hour()).expect("valid")).collect(),
    };
    let size = model.config().image_size;
    let satellite = Arc::new(render_satellite(cam, size));
    let samples: Vec<Sample> = times
        .iter()
        .map(|&t| Sample {
            id: alloc::format!("{}@{}", cam.camera_id, t.index()),
            camera_id: cam.camera_id.clone(),
            ground: render_ground(cam, t, sample_seed, size),
            satellite: Arc::clone(&satellite),
            location: cam.location,
            timestamp: t,
            attributes: crate::world::oracle_attributes(&crate::world::derive_latents(cam, t, sample_seed)),
        })
        .collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let tuples: Vec<(usize, Timestamp)> = (0..samples.len()).map(|i| (i, alleged)).collect();
    let preds = model.predict(&refs, &tuples)?;
    Ok(ConsistencyCurve {
        axis,
        alleged,
        points: times.into_iter().zip(preds).map(|(t, p)| (t, p.consistency.p_consistent())).collect(),
    })
}

/// `p_consistent` for every alleged (month, hour) with one sample's image,
/// tile and location fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyHeatmap {
    /// Row-major 12 × 24: `grid[(month - 1) * 24 + hour]`.
    pub grid: Vec<f64>,
    pub ground_truth: Timestamp,
}

impl ConsistencyHeatmap {
    pub fn get(&self, t: Timestamp) -> f64 {
        self.grid[t.index()]
    }

    pub fn argmax(&self) -> Timestamp {
        let i = (0..self.grid.len()).max_by(|&a, &b| self.grid[a].total_cmp(&self.grid[b])).expect("nonempty grid");
        Timestamp::from_index(i)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.grid.clone();
        v.sort_by(f64::total_cmp);
        (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
    }
}

pub fn time_estimation_heatmap(model: &Model, sample: &Sample) -> Result<ConsistencyHeatmap, ModelError> {
    Ok(time_estimation_heatmaps(model, core::slice::from_ref(sample))?.remove(0))
}

/// Heatmaps of many samples, sharing one encoding of the time grid.
pub fn time_estimation_heatmaps(model: &Model, samples: &[Sample]) -> Result<Vec<ConsistencyHeatmap>, ModelError> {
    let grid: Vec<Timestamp> = Timestamp::all().collect();
    let tf = model.encode_times(&grid);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let sf = model.encode_samples(&EncoderInputs::new(&refs, model.config().image_size)?);
        let pairs: Vec<(usize, usize)> = (0..chunk.len()).flat_map(|i| (0..grid.len()).map(move |t| (i, t))).collect();
        let preds = model.predict_encoded(&sf, &tf, grid.len(), &pairs);
        for (i, s) in chunk.iter().enumerate() {
            out.push(ConsistencyHeatmap {
                grid: preds[i * grid.len()..(i + 1) * grid.len()].iter().map(|p| p.consistency.p_consistent()).collect(),
                ground_truth: s.timestamp,
            });
        }
    }
    Ok(out)
}

/// Logistic regression fitted by Newton's method with a small ridge term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    /// Intercept first, then one weight per feature.
    pub weights: Vec<f64>,
}

impl LogisticRegression {
    pub const RIDGE: f64 = 1e-6;
    pub const ITERATIONS: usize = 50;

    /// Fit `P(label = 1 | x)`. Every row must have the same length.
    pub fn fit(rows: &[Vec<f64>], labels: &[Label]) -> Self {
        let d = rows.first().map_or(0, Vec::len) + 1;
        let mut w = alloc::vec![0.0; d];
        for _ in 0..Self::ITERATIONS {
            let mut g = alloc::vec![0.0; d];
            let mut hess = alloc::vec![0.0; d * d];
            for (x, y) in rows.iter().zip(labels) {
                let xi: Vec<f64> = core::iter::once(1.0).chain(x.iter().copied()).collect();
                let p = sigmoid(dot(&w, &xi));
                let r = p - y.as_f64();
                let s = p * (1.0 - p);
                for a in 0..d {
                    g[a] += r * xi[a];
                    for b in 0..d {
                        hess[a * d + b] += s * xi[a] * xi[b];
                    }
                }
            }
            for a in 0..d {
                g[a] += Self::RIDGE * w[a];
                hess[a * d + a] += Self::RIDGE;
            }
            let step = solve(&mut hess, &mut g, d);
            let mut change = 0.0f64;
            for a in 0..d {
                w[a] -= step[a];
                change = change.max(step[a].abs());
            }
            if change < 1e-10 {
                break;
            }
        }
        Self { weights: w }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.weights[0] + dot(&self.weights[1..], x))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting; consumes `m` and `v`.
fn solve(m: &mut [f64], v: &mut [f64], d: usize) -> Vec<f64> {
    for c in 0..d {
        let p = (c..d).max_by(|&a, &b| m[a * d + c].abs().total_cmp(&m[b * d + c].abs())).expect("nonempty");
        if p != c {
            for k in 0..d {
                m.swap(c * d + k, p * d + k);
            }
            v.swap(c, p);
        }
        let piv = m[c * d + c];
        for r in c + 1..d {
            let f = m[r * d + c] / piv;
            for k in c..d {
                m[r * d + k] -= f * m[c * d + k];
            }
            v[r] -= f * v[c];
        }
    }
    let mut x = alloc::vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = (r + 1..d).map(|k| m[r * d + k] * x[k]).sum();
        x[r] = (v[r] - s) / m[r * d + r];
    }
    x
}

/// Features of the daylight oracle for one tuple: the scene's daylight
/// latent, the daylight the alleged time would have at the sample's
/// location, their absolute difference and its square.
pub fn daylight_oracle_features(true_daylight: f64, sample: &Sample, alleged: Timestamp) -> Vec<f64> {
    let alleged_daylight = daylight_from_elevation(sun_elevation(sample.location, alleged));
    let gap = (true_daylight - alleged_daylight).abs();
    alloc::vec![true_daylight, alleged_daylight, gap, gap * gap]
}

/// Fit the daylight oracle on training tuples and score test tuples with it.
/// `daylight[i]` is the latent of `samples[i]`. Returns `P(inconsistent)`.
pub fn daylight_oracle_scores(
    samples: &[Sample],
    daylight: &[f64],
    train: &[VerificationTuple],
    test: &[VerificationTuple],
) -> Vec<f64> {
    let feats = |ts: &[VerificationTuple]| -> Vec<Vec<f64>> { ts.iter().map(|t| daylight_oracle_features(daylight[t.sample], &samples[t.sample], t.alleged)).collect() };
    let labels: Vec<Label> = train.iter().map(|t| t.label).collect();
    let lr = LogisticRegression::fit(&feats(train), &labels);
    feats(test).iter().map(|x| lr.predict(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::world::{generate_dataset, World};

    fn tiny_model() -> Model {
        Model::new(ModelConfig {
            image_size: 8,
            backbone_channels: alloc::vec![2, 2],
            ..ModelConfig::miniature()
        })
        .unwrap()
    }

    /// A model whose consistency logits do not depend on the input.
    fn constant_model() -> Model {
        let mut m = tiny_model();
        let head = m.consistency.head.as_mut().unwrap();
        head.weight.value.iter_mut().for_each(|w| *w = 0.0);
        head.bias.value = alloc::vec![0.3, -0.2];
        m
    }

    #[test]
    fn logistic_regression_recovers_a_threshold() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| alloc::vec![i as f64 / 200.0]).collect();
        let labels: Vec<Label> = (0..200).map(|i| if (i * 7919) % 200 < i { Label::Inconsistent } else { Label::Consistent }).collect();
        let lr = LogisticRegression::fit(&rows, &labels);
        assert!(lr.weights[1] > 0.0);
        assert!(lr.predict(&[0.05]) < 0.5 && lr.predict(&[0.95]) > 0.5);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), [2.0, 3.5, 3.5, 1.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_shape_and_counts() {
        let data = generate_dataset(2, 3, 1, 8);
        let g = shift_grid_eval(&tiny_model(), &data, 0..=6, 0..=12).unwrap();
        assert_eq!(g.cells.len(), 90);
        assert!(g.cell(0, 0).is_none());
        for c in &g.cells {
            assert!((0.0..=1.0).contains(&c.rate));
            let variants = tamper_grid(data[0].timestamp, ShiftPair::new(c.months, c.hours)).len();
            assert_eq!(c.count, data.len() * variants);
        }
    }

    #[test]
    fn constant_model_gives_constant_cells_and_heatmap() {
        let data = generate_dataset(2, 3, 1, 8);
        let m = constant_model();
        let g = shift_grid_eval(&m, &data, 0..=2, 0..=2).unwrap();
        // logits favour consistent, so nothing is detected
        assert!(g.cells.iter().all(|c| c.rate == 0.0));
        let h = time_estimation_heatmap(&m, &data[0]).unwrap();
        assert_eq!(h.grid.len(), 288);
        assert!(h.grid.iter().all(|v| (v - h.grid[0]).abs() < 1e-15));
        assert!((0.0..=1.0).contains(&h.grid[0]));
    }

    #[test]
    fn heatmaps_are_deterministic() {
        let data = generate_dataset(1, 2, 4, 8);
        let m = tiny_model();
        let twin = data[0].clone();
        assert_eq!(time_estimation_heatmap(&m, &data[0]).unwrap(), time_estimation_heatmap(&m, &twin).unwrap());
        let many = time_estimation_heatmaps(&m, &data).unwrap();
        assert_eq!(many[0], time_estimation_heatmap(&m, &data[0]).unwrap());
        assert_eq!(many[1], time_estimation_heatmap(&m, &data[1]).unwrap());
    }

    #[test]
    fn zero_noise_row_equals_clean_evaluation() {
        let data = generate_dataset(2, 4, 2, 8);
        let tuples = crate::eval::exchange_tuples(&data, 3).unwrap();
        let m = tiny_model();
        let world = World::new(2);
        let rows = location_noise_eval(&m, &data, &tuples, &[0.0, 15.0], &world, 1).unwrap();
        assert_eq!(rows[0].metrics, evaluate(&m, &data, &tuples).unwrap());
        let moved = jitter_samples(&data, 15.0, &world, 1);
        assert!(moved.iter().zip(&data).all(|(a, b)| a.location != b.location));
    }

    #[test]
    fn curve_lengths() {
        let cam = World::new(3).camera_at("c", crate::types::GeoLocation::new(30.0, 10.0).unwrap());
        let m = tiny_model();
        let t = Timestamp::new(6, 12).unwrap();
        assert_eq!(consistency_curve(&m, &cam, t, SweepAxis::Hour, 1).unwrap().points.len(), 24);
        assert_eq!(consistency_curve(&m, &cam, t, SweepAxis::Month, 1).unwrap().points.len(), 12);
        let flat = consistency_curve(&constant_model(), &cam, t, SweepAxis::Hour, 1).unwrap();
        assert!(flat.points.iter().all(|p| (p.1 - flat.points[0].1).abs() < 1e-15));
    }
}
