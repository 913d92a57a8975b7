//! Explanations: occlusion maps, attribute divergence and mutual-information
//! rankings of the transient-attribute branches.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::eval::predict_tuples;
use crate::model::{EncoderInputs, Model, ModelError};
use crate::types::{Label, Sample, Timestamp, VerificationTuple, ATTRIBUTE_NAMES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the model has no transient-attribute branches")]
    NoAttributeBranches,
    #[error("no {0:?} tuples pass the confidence filter")]
    EmptyClass(Label),
    #[error("patch {0}x{1} does not fit a {2}-pixel image")]
    Patch(usize, usize, usize),
    #[error("histograms need at least one bin")]
    Bins,
}

/// Patch shapes `(height, width)` at the reference 224-pixel resolution.
pub const REFERENCE_PATCHES: [(usize, usize); 4] = [(50, 50), (100, 100), (100, 50), (50, 100)];

/// The reference patch shapes scaled to `size` pixels (at least one pixel).
pub fn scaled_patches(size: usize) -> Vec<(usize, usize)> {
    let f = size as f64 / 224.0;
    let s = |v: usize| ((v as f64 * f).round() as usize).clamp(1, size);
    REFERENCE_PATCHES.iter().map(|&(h, w)| (s(h), s(w))).collect()
}

/// Window origins along one axis: stride `patch / 2` (at least 1), plus a
/// final window flush with the far edge so every pixel is covered.
pub fn window_origins(extent: usize, patch: usize) -> Vec<usize> {
    let stride = (patch / 2).max(1);
    let mut v: Vec<usize> = (0..=extent - patch).step_by(stride).collect();
    if *v.last().expect("nonempty") != extent - patch {
        v.push(extent - patch);
    }
    v
}

/// One occluded window and the change it caused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchEffect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
    pub delta: f64,
}

/// Per-pixel mean of the deltas of every window covering it; 0 where none do.
pub fn aggregate_patches(height: usize, width: usize, patches: &[PatchEffect]) -> Vec<f64> {
    let mut sum = alloc::vec![0.0; height * width];
    let mut n = alloc::vec![0u32; height * width];
    for p in patches {
        for y in p.y..p.y + p.height {
            for x in p.x..p.x + p.width {
                sum[y * width + x] += p.delta;
                n[y * width + x] += 1;
            }
        }
    }
    sum.iter().zip(&n).map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMap {
    pub height: usize,
    pub width: usize,
    pub alleged: Timestamp,
    /// `p_consistent` of the unoccluded image.
    pub baseline: f64,
    /// Row-major mean change of `p_consistent` when the pixel is hidden.
    pub values: Vec<f64>,
    pub patches: Vec<PatchEffect>,
}

impl OcclusionMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Slide each patch shape over the ground image, fill it with mid-gray (real
/// value 0) and record the change in `p_consistent` for the alleged time.
pub fn occlusion_map(model: &Model, sample: &Sample, alleged: Timestamp, patches: &[(usize, usize)]) -> Result<OcclusionMap, ExplainError> {
    occlusion_map_with(model, sample, alleged, patches, |_, _, _| 0.0)
}

const OCCLUSION_CHUNK: usize = 32;

/// As [`occlusion_map`], with `fill(y, x, c)` supplying the hidden pixels.
pub fn occlusion_map_with(
    model: &Model,
    sample: &Sample,
    alleged: Timestamp,
    patches: &[(usize, usize)],
    fill: impl Fn(usize, usize, usize) -> f64,
) -> Result<OcclusionMap, ExplainError> {
    let size = model.config().image_size;
    let img = &sample.ground;
    let (h, w) = (img.height(), img.width());
    let mut windows = Vec::new();
    for &(ph, pw) in patches {
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(ExplainError::Patch(ph, pw, size));
        }
        for y in window_origins(h, ph) {
            for x in window_origins(w, pw) {
                windows.push((y, x, ph, pw));
            }
        }
    }
    let base_pixels: Vec<f64> = (0..h * w * 3).map(|i| img.get(i / 3 / w, (i / 3) % w, i % 3)).collect();
    let times = model.encode_times(&[alleged]);
    let score = |variants: &[Option<(usize, usize, usize, usize)>]| -> Result<Vec<f64>, ModelError> {
        let refs: Vec<&Sample> = variants.iter().map(|_| sample).collect();
        let mut inputs = EncoderInputs::new(&refs, size)?;
        for (i, v) in variants.iter().enumerate() {
            if let Some((y0, x0, ph, pw)) = *v {
                let mut px = base_pixels.clone();
                for y in y0..y0 + ph {
                    for x in x0..x0 + pw {
                        for c in 0..3 {
                            px[(y * w + x) * 3 + c] = fill(y, x, c);
                        }
                    }
                }
                inputs.set_ground_real(i, &px);
            }
        }
        let sf = model.encode_samples(&inputs);
        let pairs: Vec<(usize, usize)> = (0..variants.len()).map(|i| (i, 0)).collect();
        Ok(model.predict_encoded(&sf, &times, 1, &pairs).into_iter().map(|p| p.consistency.p_consistent()).collect())
    };
    let baseline = score(&[None])?[0];
    let mut effects = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(OCCLUSION_CHUNK) {
        let variants: Vec<_> = chunk.iter().map(|&v| Some(v)).collect();
        for (&(y, x, ph, pw), p) in chunk.iter().zip(score(&variants)?) {
            effects.push(PatchEffect {
                y,
                x,
                height: ph,
                width: pw,
                delta: p - baseline,
            });
        }
    }
    Ok(OcclusionMap {
        height: h,
        width: w,
        alleged,
        baseline,
        values: aggregate_patches(h, w, &effects),
        patches: effects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub name: String,
    pub ground: f64,
    pub satellite: f64,
    pub divergence: f64,
}

/// Attribute estimates from the ground image and from the satellite,
/// location and alleged time, most divergent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub alleged: Timestamp,
    pub p_consistent: f64,
    pub entries: Vec<AttributeEntry>,
}

impl AttributeReport {
    pub fn top(&self, k: usize) -> &[AttributeEntry] {
        &self.entries[..k.min(self.entries.len())]
    }
}

pub fn attribute_report(model: &Model, sample: &Sample, alleged: Timestamp) -> Result<AttributeReport, ExplainError> {
    if !model.has_attribute_branches() {
        return Err(ExplainError::NoAttributeBranches);
    }
    let p = model.predict(&[sample], &[(0, alleged)])?.remove(0);
    let (g, s) = (p.attr_ground.expect("attribute branch"), p.attr_sat.expect("attribute branch"));
    let mut entries: Vec<AttributeEntry> = g
        .iter()
        .zip(&s)
        .enumerate()
        .map(|(i, (&a, &b))| AttributeEntry {
            name: attribute_name(i),
            ground: a,
            satellite: b,
            divergence: (a - b).abs(),
        })
        .collect();
    entries.sort_by(|a, b| b.divergence.total_cmp(&a.divergence));
    Ok(AttributeReport {
        alleged,
        p_consistent: p.consistency.p_consistent(),
        entries,
    })
}

fn attribute_name(i: usize) -> String {
    ATTRIBUTE_NAMES.get(i).map_or_else(|| alloc::format!("attribute{i}"), |n| String::from(*n))
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Row-major `bins × bins` counts of value pairs in `[0, 1]²` (values outside
/// are clamped into the edge bins).
pub fn joint_histogram(pairs: &[(f64, f64)], bins: usize) -> Vec<u64> {
    let mut h = alloc::vec![0u64; bins * bins];
    for &(a, b) in pairs {
        h[bin_of(a, bins) * bins + bin_of(b, bins)] += 1;
    }
    h
}

/// Mutual information in bits of a joint count table.
pub fn mutual_information(joint: &[u64], bins: usize) -> f64 {
    let n: u64 = joint.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let mut row = alloc::vec![0.0; bins];
    let mut col = alloc::vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            row[i] += joint[i * bins + j] as f64;
            col[j] += joint[i * bins + j] as f64;
        }
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j] as f64;
            if c > 0.0 {
                mi += c / n * (c * n / (row[i] * col[j])).log2();
            }
        }
    }
    mi.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMi {
    pub name: String,
    pub slot: usize,
    pub mi_consistent: f64,
    pub mi_inconsistent: f64,
    pub delta: f64,
    /// Histograms of `|a_G - a_S|` over `bins` equal-width bins of `[0, 1]`.
    pub divergence_consistent: Vec<u64>,
    pub divergence_inconsistent: Vec<u64>,
}

/// Attributes ranked by how much more the two branches agree on consistent
/// tuples than on inconsistent ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiRanking {
    pub bins: usize,
    pub min_confidence: f64,
    pub consistent_count: usize,
    pub inconsistent_count: usize,
    /// Sorted by `delta`, largest first.
    pub attributes: Vec<AttributeMi>,
}

impl MiRanking {
    /// 1-based rank of an attribute.
    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name).map(|i| i + 1)
    }
}

/// Mutual information between ground- and satellite-branch estimates of
/// every attribute, split by true label, over tuples predicted with at least
/// `min_confidence`.
pub fn mi_ranking(model: &Model, samples: &[Sample], tuples: &[VerificationTuple], bins: usize, min_confidence: f64) -> Result<MiRanking, ExplainError> {
    if !model.has_attribute_branches() {
        return Err(ExplainError::NoAttributeBranches);
    }
    if bins == 0 {
        return Err(ExplainError::Bins);
    }
    let preds = predict_tuples(model, samples, tuples)?;
    let mut classes: [Vec<(&[f64], &[f64])>; 2] = [Vec::new(), Vec::new()];
    for (t, p) in tuples.iter().zip(&preds) {
        if p.consistency.confidence() >= min_confidence {
            let g = p.attr_ground.as_deref().expect("attribute branch");
            let s = p.attr_sat.as_deref().expect("attribute branch");
            classes[t.label.as_u8() as usize].push((g, s));
        }
    }
    for (k, label) in [Label::Consistent, Label::Inconsistent].into_iter().enumerate() {
        if classes[k].is_empty() {
            return Err(ExplainError::EmptyClass(label));
        }
    }
    let dim = model.config().attribute_dim;
    let per_class = |k: usize, slot: usize| {
        let pairs: Vec<(f64, f64)> = classes[k].iter().map(|(g, s)| (g[slot], s[slot])).collect();
        let mut div = alloc::vec![0u64; bins];
        for &(a, b) in &pairs {
            div[bin_of((a - b).abs(), bins)] += 1;
        }
        (mutual_information(&joint_histogram(&pairs, bins), bins), div)
    };
    let mut attributes: Vec<AttributeMi> = (0..dim)
        .map(|slot| {
            let (mc, dc) = per_class(0, slot);
            let (mi, di) = per_class(1, slot);
            AttributeMi {
                name: attribute_name(slot),
                slot,
                mi_consistent: mc,
                mi_inconsistent: mi,
                delta: mc - mi,
                divergence_consistent: dc,
                divergence_inconsistent: di,
            }
        })
        .collect();
    attributes.sort_by(|a, b| b.delta.total_cmp(&a.delta).then(a.slot.cmp(&b.slot)));
    Ok(MiRanking {
        bins,
        min_confidence,
        consistent_count: classes[0].len(),
        inconsistent_count: classes[1].len(),
        attributes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModalitySet, ModelConfig};
    use crate::world::generate_dataset;

    fn tiny(ta: bool) -> Model {
        Model::new(ModelConfig {
            image_size: 8,
            backbone_channels: alloc::vec![2, 2],
            ta_branches: ta,
            modalities: ModalitySet::FULL,
            ..ModelConfig::miniature()
        })
        .unwrap()
    }

    #[test]
    fn two_patch_toy_aggregation() {
        // 2x3 image; patch A covers columns 0-1 (delta 0.2), patch B columns 1-2 (delta -0.4)
        let p = [
            PatchEffect { y: 0, x: 0, height: 2, width: 2, delta: 0.2 },
            PatchEffect { y: 0, x: 1, height: 2, width: 2, delta: -0.4 },
        ];
        let v = aggregate_patches(2, 3, &p);
        let want = [0.2, -0.1, -0.4];
        for y in 0..2 {
            for x in 0..3 {
                assert!((v[y * 3 + x] - want[x]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn windows_cover_every_pixel() {
        assert_eq!(window_origins(32, 7), [0, 3, 6, 9, 12, 15, 18, 21, 24, 25]);
        assert_eq!(window_origins(8, 4), [0, 2, 4]);
        assert_eq!(window_origins(5, 5), [0]);
        assert_eq!(scaled_patches(224), REFERENCE_PATCHES);
        assert_eq!(scaled_patches(32), [(7, 7), (14, 14), (14, 7), (7, 14)]);
    }

    #[test]
    fn identity_occlusion_is_zero() {
        let data = generate_dataset(1, 1, 3, 8);
        let s = &data[0];
        let img = s.ground.clone();
        let m = occlusion_map_with(&tiny(false), s, s.timestamp, &[(4, 4), (2, 3)], |y, x, c| img.get(y, x, c)).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(m.patches.iter().all(|p| p.delta == 0.0));
        let gray = occlusion_map(&tiny(false), s, s.timestamp, &[(4, 4)]).unwrap();
        assert_eq!(gray.patches.len(), 9);
        assert!(gray.values.iter().any(|&v| v != 0.0));
        assert!(matches!(occlusion_map(&tiny(false), s, s.timestamp, &[(9, 1)]), Err(ExplainError::Patch(9, 1, 8))));
    }

    #[test]
    fn mi_oracles() {
        // independent uniform pairs: zero information
        let mut indep = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                indep.push((i as f64 / 10.0 + 0.05, j as f64 / 10.0 + 0.05));
            }
        }
        assert!(mutual_information(&joint_histogram(&indep, 10), 10).abs() < 1e-12);
        // identical uniform values: log2(bins)
        let same: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 / 10.0 + 0.05, i as f64 / 10.0 + 0.05)).collect();
        assert!((mutual_information(&joint_histogram(&same, 10), 10) - 10f64.log2()).abs() < 1e-12);
        // a constant variable carries nothing
        let constant: Vec<(f64, f64)> = (0..10).map(|i| (0.5, i as f64 / 10.0)).collect();
        assert_eq!(mutual_information(&joint_histogram(&constant, 10), 10), 0.0);
        // the upper edge lands in the last bin
        assert_eq!(joint_histogram(&[(1.0, 0.0)], 4)[3 * 4], 1);
    }

    #[test]
    fn reports_require_attribute_branches() {
        let data = generate_dataset(2, 2, 2, 8);
        let tuples = crate::eval::exchange_tuples(&data, 1).unwrap();
        let plain = tiny(false);
        assert_eq!(attribute_report(&plain, &data[0], data[0].timestamp), Err(ExplainError::NoAttributeBranches));
        assert_eq!(mi_ranking(&plain, &data, &tuples, 10, 0.0), Err(ExplainError::NoAttributeBranches));
        let m = tiny(true);
        let r = attribute_report(&m, &data[0], data[0].timestamp).unwrap();
        assert_eq!(r.entries.len(), 40);
        assert!(r.entries.windows(2).all(|w| w[0].divergence >= w[1].divergence));
        assert_eq!(r.top(5).len(), 5);
        let rank = mi_ranking(&m, &data, &tuples, 10, 0.0).unwrap();
        assert_eq!(rank.attributes.len(), 40);
        assert_eq!(rank.consistent_count + rank.inconsistent_count, tuples.len());
        assert!(rank.rank_of("daylight").is_some());
        assert!(matches!(mi_ranking(&m, &data, &tuples, 10, 1.1), Err(ExplainError::EmptyClass(_))));
    }
}
