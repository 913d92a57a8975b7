//! Train/test partitioning, including the camera-disjoint protocol.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::types::Sample;

/// Anything that can be split: a record id and the camera it came from.
pub trait SplitKey {
    fn record_id(&self) -> &str;
    fn camera_id(&self) -> &str;
}

impl SplitKey for Sample {
    fn record_id(&self) -> &str {
        &self.id
    }

    fn camera_id(&self) -> &str {
        &self.camera_id
    }
}

impl<A: AsRef<str>, B: AsRef<str>> SplitKey for (A, B) {
    fn record_id(&self) -> &str {
        self.0.as_ref()
    }

    fn camera_id(&self) -> &str {
        self.1.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Records are split individually; cameras may appear on both sides.
    SharedCamera,
    /// Whole cameras are assigned to one side.
    CrossCamera,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("cross-camera split needs at least two cameras, found {0}")]
    NotEnoughCameras(usize),
    #[error("cannot split fewer than two records")]
    TooFewRecords,
}

/// Indices into the record list, each side sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn train_fraction(&self) -> f64 {
        self.train.len() as f64 / (self.train.len() + self.test.len()) as f64
    }
}

pub fn split_indices<R: SplitKey>(records: &[R], spec: &SplitSpec) -> Result<SplitIndices, SplitError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SplitError::Fraction(spec.train_fraction));
    }
    if records.len() < 2 {
        return Err(SplitError::TooFewRecords);
    }
    let mut rng = rng_from(&[spec.seed, 0x5B17]);
    match spec.mode {
        SplitMode::SharedCamera => {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut rng);
            let n_train = ((records.len() as f64 * spec.train_fraction).round() as usize).clamp(1, records.len() - 1);
            let mut train = order[..n_train].to_vec();
            let mut test = order[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Ok(SplitIndices { train, test })
        }
        SplitMode::CrossCamera => {
            let mut by_camera: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                by_camera.entry(r.camera_id()).or_default().push(i);
            }
            if by_camera.len() < 2 {
                return Err(SplitError::NotEnoughCameras(by_camera.len()));
            }
            let mut groups: Vec<Vec<usize>> = by_camera.into_values().collect();
            // seed decides the order among equally sized cameras
            groups.shuffle(&mut rng);
            groups.sort_by_key(|g| core::cmp::Reverse(g.len()));
            let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            let in_train = assign_cameras(&sizes, spec.train_fraction);
            let mut out = SplitIndices::default();
            for (g, train) in groups.into_iter().zip(in_train) {
                if train {
                    out.train.extend(g);
                } else {
                    out.test.extend(g);
                }
            }
            out.train.sort_unstable();
            out.test.sort_unstable();
            Ok(out)
        }
    }
}

/// Greedy deficit balancing over cameras sorted by descending size, followed
/// by single-move and swap refinement while the train share gets closer to
/// the target. Both sides stay nonempty.
fn assign_cameras(sizes: &[usize], fraction: f64) -> Vec<bool> {
    let total: usize = sizes.iter().sum();
    let target_train = fraction * total as f64;
    let target_test = total as f64 - target_train;
    let mut in_train = Vec::with_capacity(sizes.len());
    let (mut cur_train, mut cur_test) = (0usize, 0usize);
    for &s in sizes {
        let dtrain = target_train - cur_train as f64;
        let dtest = target_test - cur_test as f64;
        if dtrain >= dtest {
            in_train.push(true);
            cur_train += s;
        } else {
            in_train.push(false);
            cur_test += s;
        }
    }
    // keep both sides populated: move the smallest camera across
    for side in [true, false] {
        if in_train.iter().all(|&t| t == side) {
            let smallest = (0..sizes.len()).min_by_key(|&i| (sizes[i], usize::MAX - i)).unwrap();
            in_train[smallest] = !side;
        }
    }
    let train_size = |a: &[bool]| -> usize { a.iter().zip(sizes).filter(|(t, _)| **t).map(|(_, s)| s).sum() };
    let count = |a: &[bool], side: bool| a.iter().filter(|&&t| t == side).count();
    let mut err = (train_size(&in_train) as f64 - target_train).abs();
    for _ in 0..4 * sizes.len() {
        let mut best: Option<(f64, Vec<bool>)> = None;
        let mut consider = |cand: Vec<bool>| {
            if count(&cand, true) == 0 || count(&cand, false) == 0 {
                return;
            }
            let e = (train_size(&cand) as f64 - target_train).abs();
            if e + 1e-9 < err && best.as_ref().map_or(true, |(be, _)| e + 1e-9 < *be) {
                best = Some((e, cand));
            }
        };
        for i in 0..sizes.len() {
            let mut c = in_train.clone();
            c[i] = !c[i];
            consider(c);
        }
        for i in 0..sizes.len() {
            for j in (i + 1)..sizes.len() {
                if in_train[i] != in_train[j] {
                    let mut c = in_train.clone();
                    c.swap(i, j);
                    consider(c);
                }
            }
        }
        match best {
            Some((e, c)) => {
                err = e;
                in_train = c;
            }
            None => break,
        }
    }
    in_train
}

/// Record ids on each side of the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn split<R: SplitKey>(records: &[R], spec: &SplitSpec) -> Result<Split, SplitError> {
    let idx = split_indices(records, spec)?;
    let ids = |v: &[usize]| v.iter().map(|&i| String::from(records[i].record_id())).collect();
    Ok(Split {
        train: ids(&idx.train),
        test: ids(&idx.test),
    })
}
