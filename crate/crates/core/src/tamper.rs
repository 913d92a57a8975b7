//! Timestamp manipulation and location augmentation protocols.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::{jitter_location, Axis, GeoLocation, ImageTensor, Label, Sample, Sign, Timestamp, VerificationTuple};

/// Draw attempts before an exchange is declared impossible.
pub const EXCHANGE_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TamperError {
    #[error("exchange pool is empty")]
    EmptyPool,
    #[error("no timestamp different from {0} found in the pool after {EXCHANGE_RETRIES} draws")]
    NoDistinctTimestamp(Timestamp),
    #[error("jitter magnitudes must be positive and finite, got {0}")]
    Magnitude(f64),
    #[error("jitter schedule needs at least one magnitude")]
    NoMagnitudes,
    #[error("batch fraction {0} outside [0, 1]")]
    Fraction(f64),
}

/// Symmetric month/hour offsets used by the shift-grid study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftPair {
    pub months: u32,
    pub hours: u32,
}

impl ShiftPair {
    pub fn new(months: u32, hours: u32) -> Self {
        Self { months, hours }
    }

    pub fn is_zero(self) -> bool {
        self.months == 0 && self.hours == 0
    }
}

/// Replace the true timestamp by one drawn uniformly from `pool`, redrawing
/// when the draw equals the truth.
pub fn exchange_timestamp(truth: Timestamp, pool: &[Timestamp], rng: &mut impl Rng) -> Result<Timestamp, TamperError> {
    if pool.is_empty() {
        return Err(TamperError::EmptyPool);
    }
    for _ in 0..EXCHANGE_RETRIES {
        let t = pool[rng.random_range(0..pool.len())];
        if t != truth {
            return Ok(t);
        }
    }
    Err(TamperError::NoDistinctTimestamp(truth))
}

/// Inconsistent tuple for `sample` whose alleged time comes from `pool`.
pub fn tamper_by_exchange(
    sample: usize,
    samples: &[Sample],
    pool: &[Timestamp],
    rng: &mut impl Rng,
) -> Result<VerificationTuple, TamperError> {
    Ok(VerificationTuple {
        sample,
        alleged: exchange_timestamp(samples[sample].timestamp, pool, rng)?,
        label: Label::Inconsistent,
    })
}

/// The up-to-four timestamps `(month ± Δm, hour ± Δh)`, ordered
/// `[+Δm, -Δm] × [-Δh, +Δh]`, with coinciding variants collapsed.
pub fn tamper_grid(t: Timestamp, s: ShiftPair) -> Vec<Timestamp> {
    let (dm, dh) = (s.months as i32, s.hours as i32);
    let mut out: Vec<Timestamp> = Vec::with_capacity(4);
    for m in [dm, -dm] {
        for h in [-dh, dh] {
            let v = t.shifted(m, h);
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

pub const SUBTLE_DELTAS: [i32; 4] = [-2, -1, 1, 2];

/// Shift both month and hour by independent draws from {-2, -1, 1, 2}.
pub fn sample_subtle_tamper(t: Timestamp, rng: &mut impl Rng) -> Timestamp {
    let dm = SUBTLE_DELTAS[rng.random_range(0..4)];
    let dh = SUBTLE_DELTAS[rng.random_range(0..4)];
    t.shifted(dm, dh)
}

/// Which jitter magnitudes to use and on what share of each batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterSchedule {
    magnitudes: Vec<f64>,
    batch_fraction: f64,
}

impl JitterSchedule {
    pub fn new(magnitudes: Vec<f64>, batch_fraction: f64) -> Result<Self, TamperError> {
        if magnitudes.is_empty() {
            return Err(TamperError::NoMagnitudes);
        }
        if let Some(&m) = magnitudes.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(TamperError::Magnitude(m));
        }
        if !(0.0..=1.0).contains(&batch_fraction) {
            return Err(TamperError::Fraction(batch_fraction));
        }
        Ok(Self {
            magnitudes,
            batch_fraction,
        })
    }

    /// Magnitudes {0.05, 0.1, 0.25, 0.5, 1, 5, 10, 15} degrees on half of each batch.
    pub fn standard() -> Self {
        Self::new(alloc::vec![0.05, 0.1, 0.25, 0.5, 1.0, 5.0, 10.0, 15.0], 0.5).expect("valid schedule")
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn batch_fraction(&self) -> f64 {
        self.batch_fraction
    }

    /// Number of samples jittered in a batch of `n`.
    pub fn jitter_count(&self, n: usize) -> usize {
        ((self.batch_fraction * n as f64).round() as usize).min(n)
    }
}

/// Renders the basemap tile for an arbitrary location.
pub trait TileSource {
    fn tile(&self, location: GeoLocation, size: usize) -> ImageTensor;
}

/// One applied perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub index: usize,
    pub axis: Axis,
    pub sign: Sign,
    pub magnitude: f64,
}

/// Draw a uniform axis, sign and magnitude.
pub fn draw_jitter(magnitudes: &[f64], rng: &mut impl Rng) -> (Axis, Sign, f64) {
    let axis = if rng.random_bool(0.5) { Axis::Lat } else { Axis::Lon };
    let sign = if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus };
    let magnitude = magnitudes[rng.random_range(0..magnitudes.len())];
    (axis, sign, magnitude)
}

/// Move the location of a `batch_fraction` subset of `batch` and re-render
/// the satellite tile at the new location. Returns the applied jitters.
pub fn augment_locations(
    batch: &mut [Sample],
    schedule: &JitterSchedule,
    tiles: &dyn TileSource,
    rng: &mut impl Rng,
) -> Vec<Jitter> {
    let k = schedule.jitter_count(batch.len());
    let mut chosen = index::sample(rng, batch.len(), k).into_vec();
    chosen.sort_unstable();
    let mut applied = Vec::with_capacity(k);
    for i in chosen {
        let (axis, sign, magnitude) = draw_jitter(&schedule.magnitudes, rng);
        let s = &mut batch[i];
        s.location = jitter_location(s.location, magnitude, axis, sign).expect("positive magnitude");
        let size = s.satellite.height();
        s.satellite = alloc::sync::Arc::new(tiles.tile(s.location, size));
        applied.push(Jitter {
            index: i,
            axis,
            sign,
            magnitude,
        });
    }
    applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::world::{generate_dataset, World};
    use proptest::prelude::*;

    fn ts(m: u32, h: u32) -> Timestamp {
        Timestamp::new(m, h).unwrap()
    }

    #[test]
    fn grid_matches_worked_example() {
        assert_eq!(
            tamper_grid(ts(12, 11), ShiftPair::new(1, 2)),
            [ts(1, 9), ts(1, 13), ts(11, 9), ts(11, 13)]
        );
    }

    #[test]
    fn grid_wraps_both_axes() {
        let mut g = tamper_grid(ts(1, 0), ShiftPair::new(2, 3));
        g.sort_by_key(|t| t.index());
        let mut want = [ts(11, 21), ts(11, 3), ts(3, 21), ts(3, 3)];
        want.sort_by_key(|t| t.index());
        assert_eq!(g, want);
    }

    #[test]
    fn half_cycle_shifts_collapse() {
        assert_eq!(tamper_grid(ts(6, 6), ShiftPair::new(6, 12)), [ts(12, 18)]);
        assert_eq!(tamper_grid(ts(6, 6), ShiftPair::new(0, 3)).len(), 2);
    }

    #[test]
    fn grid_is_valid_everywhere() {
        for t in Timestamp::all() {
            for dm in 0..=6 {
                for dh in 0..=12 {
                    let s = ShiftPair::new(dm, dh);
                    let g = tamper_grid(t, s);
                    assert!((1..=4).contains(&g.len()));
                    for v in &g {
                        assert!(Timestamp::new(v.month(), v.hour()).is_ok());
                        assert_eq!(t.month_distance(*v), dm);
                        assert_eq!(t.hour_distance(*v), dh);
                        if !s.is_zero() {
                            assert_ne!(*v, t);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn forced_exchange() {
        let mut r = rng_from(&[1]);
        assert_eq!(exchange_timestamp(ts(12, 2), &[ts(6, 15)], &mut r), Ok(ts(6, 15)));
        assert_eq!(
            exchange_timestamp(ts(12, 2), &[ts(12, 2)], &mut r),
            Err(TamperError::NoDistinctTimestamp(ts(12, 2)))
        );
        assert_eq!(exchange_timestamp(ts(12, 2), &[], &mut r), Err(TamperError::EmptyPool));
    }

    /// Pearson chi-square statistic of observed counts against expected counts.
    fn chi_square(observed: &[f64], expected: &[f64]) -> f64 {
        observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum()
    }

    #[test]
    fn exchange_follows_pool_distribution() {
        // pool with uneven hour frequencies; the truth is not in the pool
        let pool: Vec<Timestamp> = (0..24u32).flat_map(|h| core::iter::repeat(ts(3, h)).take(1 + h as usize % 3)).collect();
        let truth = ts(7, 5);
        let mut r = rng_from(&[2]);
        let n = 10_000;
        let mut hist = [0.0; 24];
        for _ in 0..n {
            hist[exchange_timestamp(truth, &pool, &mut r).unwrap().hour() as usize] += 1.0;
        }
        let expected: Vec<f64> = (0..24).map(|h| n as f64 * (1 + h % 3) as f64 / pool.len() as f64).collect();
        // 23 degrees of freedom; 0.999 quantile is 49.73
        assert!(chi_square(&hist, &expected) < 49.73);
    }

    #[test]
    fn subtle_deltas_are_uniform() {
        let mut r = rng_from(&[3]);
        let mut hist = [0.0; 16];
        let t = ts(6, 12);
        let n = 10_000;
        for _ in 0..n {
            let v = sample_subtle_tamper(t, &mut r);
            assert_ne!(v, t);
            let dm = v.month() as i32 - 6;
            let dh = v.hour() as i32 - 12;
            let idx = |d: i32| SUBTLE_DELTAS.iter().position(|&x| x == d).unwrap();
            hist[idx(dm) * 4 + idx(dh)] += 1.0;
        }
        // 15 degrees of freedom; 0.999 quantile is 37.70
        assert!(chi_square(&hist, &[n as f64 / 16.0; 16]) < 37.70);
    }

    #[test]
    fn subtle_wraps_both_axes() {
        let t = ts(12, 23);
        let mut r = rng_from(&[4]);
        assert!((0..2000).any(|_| sample_subtle_tamper(t, &mut r) == ts(2, 1)));
    }

    #[test]
    fn schedule_validation() {
        assert!(JitterSchedule::new(alloc::vec![], 0.5).is_err());
        assert!(JitterSchedule::new(alloc::vec![0.0], 0.5).is_err());
        assert!(JitterSchedule::new(alloc::vec![1.0], 1.5).is_err());
        assert_eq!(JitterSchedule::standard().magnitudes().len(), 8);
    }

    #[test]
    fn augmentation_counts_and_magnitudes() {
        let world = World::new(11);
        let base = generate_dataset(4, 8, 11, 8);
        let mut r = rng_from(&[5]);

        let mut b = base.clone();
        let none = JitterSchedule::new(alloc::vec![1.0], 0.0).unwrap();
        assert!(augment_locations(&mut b, &none, &world, &mut r).is_empty());
        assert_eq!(b, base);

        let mut b = base.clone();
        let all = JitterSchedule::new(alloc::vec![5.0], 1.0).unwrap();
        let j = augment_locations(&mut b, &all, &world, &mut r);
        assert_eq!(j.len(), 32);
        for (s, o) in b.iter().zip(&base) {
            let dlat = (s.location.lat() - o.location.lat()).abs();
            let dlon = (crate::types::wrap_longitude(s.location.lon() - o.location.lon())).abs();
            let moved = [dlat, dlon];
            assert!(moved.iter().filter(|d| (**d - 5.0).abs() < 1e-9).count() == 1);
            assert!(moved.iter().filter(|d| **d < 1e-9).count() == 1);
            assert_eq!(*s.satellite, world.tile(s.location, 8));
        }

        let mut b = base.clone();
        let half = JitterSchedule::new(alloc::vec![5.0], 0.5).unwrap();
        assert_eq!(augment_locations(&mut b, &half, &world, &mut r).len(), 16);
        assert_eq!(b.iter().zip(&base).filter(|(s, o)| s.location != o.location).count(), 16);
    }

    proptest! {
        #[test]
        fn exchange_never_returns_truth(m in 1u32..=12, h in 0u32..24, seed in any::<u64>()) {
            let pool: Vec<Timestamp> = [ts(m, h), ts(m, h), ts(1 + m % 12, h)].to_vec();
            let mut r = rng_from(&[seed]);
            prop_assert_ne!(exchange_timestamp(ts(m, h), &pool, &mut r).unwrap(), ts(m, h));
        }
    }
}
