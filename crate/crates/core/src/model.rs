//! The multi-modal consistency network.
//!
//! Ground image `G`, satellite tile `S`, location `l` and alleged time `t` are
//! each encoded into a feature vector. The consistency branch classifies the
//! concatenation of the enabled features; the optional attribute branches
//! estimate transient attributes from the ground image alone (`a_G`) and
//! from the remaining modalities (`a_S`).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::math::sigmoid;
use crate::nn::{gather_cols, scatter_add_cols, ConvStack, Mlp, Param, Params};
use crate::rng::rng_from;
use crate::types::{geo_to_ecef, scale_timestamp, ConsistencyPrediction, GeoLocation, ImageRole, ImageTensor, Sample, Timestamp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid modality set `{0}`: G and t are required, known modalities are G, t, l, S")]
    Modalities(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{role:?} image is {found}x{found_w}, model expects {expected}x{expected}")]
    ImageSize {
        role: ImageRole,
        expected: usize,
        found: usize,
        found_w: usize,
    },
    #[error("tensor `{0}` missing from weights")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}` in weights")]
    UnexpectedTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("operation requires the transient-attribute branches, which this model lacks")]
    NoAttributeBranches,
    #[error("tuple refers to sample {index} but only {count} samples were given")]
    TupleIndex { index: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "G")]
    Ground,
    #[serde(rename = "t")]
    Time,
    #[serde(rename = "l")]
    Location,
    #[serde(rename = "S")]
    Satellite,
}

impl Modality {
    pub fn symbol(self) -> &'static str {
        match self {
            Modality::Ground => "G",
            Modality::Time => "t",
            Modality::Location => "l",
            Modality::Satellite => "S",
        }
    }
}

/// Enabled inputs. Ground image and time are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalitySet {
    pub location: bool,
    pub satellite: bool,
}

impl ModalitySet {
    pub const GT: Self = Self {
        location: false,
        satellite: false,
    };
    pub const GTL: Self = Self {
        location: true,
        satellite: false,
    };
    pub const GTS: Self = Self {
        location: false,
        satellite: true,
    };
    pub const FULL: Self = Self {
        location: true,
        satellite: true,
    };

    pub fn from_modalities(list: &[Modality]) -> Result<Self, ModelError> {
        let name = || list.iter().map(|m| m.symbol()).collect::<Vec<_>>().join(",");
        if !list.contains(&Modality::Ground) || !list.contains(&Modality::Time) {
            return Err(ModelError::Modalities(name()));
        }
        Ok(Self {
            location: list.contains(&Modality::Location),
            satellite: list.contains(&Modality::Satellite),
        })
    }

    pub fn contains(self, m: Modality) -> bool {
        match m {
            Modality::Ground | Modality::Time => true,
            Modality::Location => self.location,
            Modality::Satellite => self.satellite,
        }
    }

    /// Enabled modalities in concatenation order `G, S, l, t`.
    pub fn ordered(self) -> Vec<Modality> {
        [Modality::Ground, Modality::Satellite, Modality::Location, Modality::Time]
            .into_iter()
            .filter(|m| self.contains(*m))
            .collect()
    }

    pub fn count(self) -> usize {
        2 + self.location as usize + self.satellite as usize
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = vec!["G", "t"];
        if self.location {
            parts.push("l");
        }
        if self.satellite {
            parts.push("S");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ModalitySet {
    type Err = ModelError;

    /// Comma-separated symbols, e.g. `G,t,l,S`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut list = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            list.push(match tok {
                "G" => Modality::Ground,
                "t" => Modality::Time,
                "l" => Modality::Location,
                "S" => Modality::Satellite,
                _ => return Err(ModelError::Modalities(s.to_string())),
            });
        }
        Self::from_modalities(&list).map_err(|_| ModelError::Modalities(s.to_string()))
    }
}

impl TryFrom<String> for ModalitySet {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModalitySet> for String {
    fn from(m: ModalitySet) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub modalities: ModalitySet,
    pub ta_branches: bool,
    /// Side length of the (square) ground and satellite images.
    pub image_size: usize,
    /// Output channels of each convolutional block.
    pub backbone_channels: Vec<usize>,
    pub feature_dim: usize,
    /// Hidden widths of the consistency and attribute branches.
    pub branch_widths: Vec<usize>,
    /// Widths of the time and location encoders; the last equals `feature_dim`.
    pub encoder_widths: Vec<usize>,
    /// Widths of the fully connected layers after the backbone; the last
    /// equals `feature_dim`.
    pub visual_widths: Vec<usize>,
    pub attribute_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64-pixel inputs and a four-block 16/32/64/128 backbone.
    pub fn desk() -> Self {
        Self {
            modalities: ModalitySet::FULL,
            ta_branches: true,
            image_size: 64,
            backbone_channels: vec![16, 32, 64, 128],
            feature_dim: 128,
            branch_widths: vec![256, 512],
            encoder_widths: vec![256, 512, 128],
            visual_widths: vec![256, 128],
            attribute_dim: 40,
            seed: 0,
        }
    }

    /// 32-pixel inputs and an 8/16/32/64 backbone; all fully connected
    /// widths as in [`ModelConfig::desk`]. Sized for single-core runs.
    pub fn compact() -> Self {
        Self {
            image_size: 32,
            backbone_channels: vec![8, 16, 32, 64],
            ..Self::desk()
        }
    }

    /// 224-pixel inputs with a five-block backbone.
    pub fn paper() -> Self {
        Self {
            image_size: 224,
            backbone_channels: vec![32, 64, 128, 256, 512],
            ..Self::desk()
        }
    }

    /// Tiny network for gradient checks: 8-pixel images, two 2-channel blocks.
    pub fn miniature() -> Self {
        Self {
            modalities: ModalitySet::FULL,
            ta_branches: true,
            image_size: 8,
            backbone_channels: vec![2, 2],
            feature_dim: 3,
            branch_widths: vec![4, 3],
            encoder_widths: vec![4, 3],
            visual_widths: vec![4, 3],
            attribute_dim: 40,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone needs at least one block with nonzero channels".into());
        }
        if self.image_size >> self.backbone_channels.len() == 0 {
            return bad(format!(
                "image size {} too small for {} pooling stages",
                self.image_size,
                self.backbone_channels.len()
            ));
        }
        for (what, w) in [("encoder", &self.encoder_widths), ("visual", &self.visual_widths)] {
            if w.last() != Some(&self.feature_dim) {
                return bad(format!("{what} widths must end with feature_dim {}", self.feature_dim));
            }
        }
        if self.feature_dim == 0 || self.attribute_dim == 0 || self.branch_widths.contains(&0) {
            return bad("widths must be positive".into());
        }
        Ok(())
    }

    pub fn consistency_input_dim(&self) -> usize {
        self.feature_dim * self.modalities.count()
    }

    pub fn attr_sat_input_dim(&self) -> usize {
        self.feature_dim * (self.modalities.count() - 1)
    }
}

/// Backbone, global average pooling, then fully connected blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEncoder {
    pub conv: ConvStack,
    pub fc: Mlp,
}

impl VisualEncoder {
    fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut r = rng_from(&[seed]);
        let conv = ConvStack::new(3, cfg.image_size, &cfg.backbone_channels, &mut r);
        let fc = Mlp::new(conv.out_channels(), &cfg.visual_widths, None, &mut r);
        Self { conv, fc }
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.fc.forward(&self.conv.forward(x, n), n)
    }

    fn forward_train(&mut self, x: &[f64], n: usize) -> Vec<f64> {
        let h = self.conv.forward_train(x, n);
        self.fc.forward_train(h, n)
    }

    fn backward(&mut self, dy: &[f64]) {
        let d = self.fc.backward(dy);
        self.conv.backward(&d);
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.fc.clear_cache();
    }
}

impl Params for VisualEncoder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv.collect(&format!("{prefix}.conv"), out);
        self.fc.collect(&format!("{prefix}.fc"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.collect_mut(&format!("{prefix}.conv"), out);
        self.fc.collect_mut(&format!("{prefix}.fc"), out);
    }
}

/// Per-sample encoder inputs in the network's layout: images `3 × (n·h·w)`,
/// locations `3 × n` (unit-sphere ECEF).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInputs {
    pub count: usize,
    pub size: usize,
    pub ground: Vec<f64>,
    pub satellite: Vec<f64>,
    pub location: Vec<f64>,
}

impl EncoderInputs {
    pub fn new(samples: &[&Sample], size: usize) -> Result<Self, ModelError> {
        let n = samples.len();
        let plane = size * size;
        let mut out = Self {
            count: n,
            size,
            ground: vec![0.0; 3 * n * plane],
            satellite: vec![0.0; 3 * n * plane],
            location: vec![0.0; 3 * n],
        };
        for (i, s) in samples.iter().enumerate() {
            out.set_ground(i, &s.ground)?;
            out.set_satellite(i, &s.satellite)?;
            out.set_location(i, s.location);
        }
        Ok(out)
    }

    fn check(&self, img: &ImageTensor) -> Result<(), ModelError> {
        if img.height() != self.size || img.width() != self.size {
            return Err(ModelError::ImageSize {
                role: img.role(),
                expected: self.size,
                found: img.height(),
                found_w: img.width(),
            });
        }
        Ok(())
    }

    fn write_image(buf: &mut [f64], n: usize, size: usize, i: usize, get: impl Fn(usize, usize, usize) -> f64) {
        let plane = size * size;
        for c in 0..3 {
            let dst = &mut buf[c * n * plane + i * plane..][..plane];
            for y in 0..size {
                for x in 0..size {
                    dst[y * size + x] = get(y, x, c);
                }
            }
        }
    }

    pub fn set_ground(&mut self, i: usize, img: &ImageTensor) -> Result<(), ModelError> {
        self.check(img)?;
        Self::write_image(&mut self.ground, self.count, self.size, i, |y, x, c| img.get(y, x, c));
        Ok(())
    }

    /// Replace ground image `i` by real-valued pixels in HWC order.
    pub fn set_ground_real(&mut self, i: usize, hwc: &[f64]) {
        let s = self.size;
        assert_eq!(hwc.len(), s * s * 3, "ground pixel buffer size");
        Self::write_image(&mut self.ground, self.count, s, i, |y, x, c| hwc[(y * s + x) * 3 + c]);
    }

    pub fn set_satellite(&mut self, i: usize, img: &ImageTensor) -> Result<(), ModelError> {
        self.check(img)?;
        Self::write_image(&mut self.satellite, self.count, self.size, i, |y, x, c| img.get(y, x, c));
        Ok(())
    }

    pub fn set_location(&mut self, i: usize, l: GeoLocation) {
        let e = geo_to_ecef(l);
        let n = self.count;
        self.location[i] = e.x;
        self.location[n + i] = e.y;
        self.location[2 * n + i] = e.z;
    }
}

/// Per-sample features in feature-major layout (`feature_dim × count`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    pub count: usize,
    pub ground: Vec<f64>,
    pub satellite: Option<Vec<f64>>,
    pub location: Option<Vec<f64>>,
    /// `a_G` probabilities, `attribute_dim × count`.
    pub attr_ground: Option<Vec<f64>>,
}

/// Output for one tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub consistency: ConsistencyPrediction,
    pub attr_ground: Option<Vec<f64>>,
    pub attr_sat: Option<Vec<f64>>,
}

/// Raw training-mode outputs, feature-major: logits `2 × tuples`,
/// `a_G` logits `attribute_dim × samples`, `a_S` logits `attribute_dim × tuples`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutputs {
    pub logits: Vec<f64>,
    pub attr_ground: Option<Vec<f64>>,
    pub attr_sat: Option<Vec<f64>>,
}

/// Loss gradients with the same layout as [`RawOutputs`].
pub type OutputGrads = RawOutputs;

#[derive(Debug, Clone, PartialEq)]
struct TrainCache {
    samples: usize,
    sample_idx: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub ground: VisualEncoder,
    pub satellite: Option<VisualEncoder>,
    pub location: Option<Mlp>,
    pub time: Mlp,
    pub consistency: Mlp,
    pub attr_ground: Option<Mlp>,
    pub attr_sat: Option<Mlp>,
    cache: Option<TrainCache>,
}

/// A named tensor as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Every tensor of a model plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let s = config.seed;
        let f = config.feature_dim;
        let a = config.attribute_dim;
        let m = config.modalities;
        let r = |k: u64| rng_from(&[s, k]);
        let ground = VisualEncoder::new(&config, crate::rng::derive_seed(&[s, 1]));
        let satellite = m.satellite.then(|| VisualEncoder::new(&config, crate::rng::derive_seed(&[s, 2])));
        let location = m.location.then(|| Mlp::new(3, &config.encoder_widths, None, &mut r(3)));
        let time = Mlp::new(2, &config.encoder_widths, None, &mut r(4));
        let consistency = Mlp::new(config.consistency_input_dim(), &config.branch_widths, Some(2), &mut r(5));
        let (attr_ground, attr_sat) = if config.ta_branches {
            (
                Some(Mlp::new(f, &config.branch_widths, Some(a), &mut r(6))),
                Some(Mlp::new(config.attr_sat_input_dim(), &config.branch_widths, Some(a), &mut r(7))),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            ground,
            satellite,
            location,
            time,
            consistency,
            attr_ground,
            attr_sat,
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn has_attribute_branches(&self) -> bool {
        self.attr_ground.is_some()
    }

    // ---- encoders (inference mode) ----

    pub fn encode_samples(&self, inputs: &EncoderInputs) -> SampleFeatures {
        let n = inputs.count;
        let ground = self.ground.forward(&inputs.ground, n);
        let attr_ground = self.attr_ground.as_ref().map(|b| {
            let mut z = b.forward(&ground, n);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
            z
        });
        SampleFeatures {
            count: n,
            satellite: self.satellite.as_ref().map(|e| e.forward(&inputs.satellite, n)),
            location: self.location.as_ref().map(|e| e.forward(&inputs.location, n)),
            ground,
            attr_ground,
        }
    }

    /// Time features, `feature_dim × times.len()`.
    pub fn encode_times(&self, times: &[Timestamp]) -> Vec<f64> {
        self.time.forward(&time_inputs(times), times.len())
    }

    /// Features of a single image.
    pub fn encode_visual(&self, img: &ImageTensor, role: ImageRole) -> Result<Vec<f64>, ModelError> {
        let mut inp = EncoderInputs {
            count: 1,
            size: self.config.image_size,
            ground: vec![0.0; 3 * self.config.image_size * self.config.image_size],
            satellite: Vec::new(),
            location: Vec::new(),
        };
        inp.set_ground(0, img)?;
        let enc = match role {
            ImageRole::Ground => &self.ground,
            ImageRole::Satellite => self.satellite.as_ref().ok_or_else(|| ModelError::Config("satellite modality disabled".into()))?,
        };
        Ok(enc.forward(&inp.ground, 1))
    }

    pub fn encode_location(&self, l: GeoLocation) -> Option<Vec<f64>> {
        let e = geo_to_ecef(l);
        self.location.as_ref().map(|m| m.forward(&[e.x, e.y, e.z], 1))
    }

    pub fn encode_time(&self, t: Timestamp) -> Vec<f64> {
        self.encode_times(&[t])
    }

    // ---- heads ----

    fn stack_inputs(&self, parts: &[&[f64]], cols: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(parts.len() * self.config.feature_dim * cols);
        for p in parts {
            x.extend_from_slice(p);
        }
        x
    }

    /// Run the tuple heads for `(sample, time)` index pairs over encoded
    /// samples and encoded times.
    pub fn predict_encoded(&self, sf: &SampleFeatures, times: &[f64], n_times: usize, pairs: &[(usize, usize)]) -> Vec<Prediction> {
        let f = self.config.feature_dim;
        let n = pairs.len();
        let si: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let ti: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let g = gather_cols(&sf.ground, f, sf.count, &si);
        let s = sf.satellite.as_ref().map(|v| gather_cols(v, f, sf.count, &si));
        let l = sf.location.as_ref().map(|v| gather_cols(v, f, sf.count, &si));
        let t = gather_cols(times, f, n_times, &ti);
        let mut parts: Vec<&[f64]> = vec![&g];
        parts.extend(s.as_deref());
        parts.extend(l.as_deref());
        parts.push(&t);
        let logits = self.consistency.forward(&self.stack_inputs(&parts, n), n);
        let attr_sat = self.attr_sat.as_ref().map(|b| {
            let mut z = b.forward(&self.stack_inputs(&parts[1..], n), n);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
            z
        });
        let a = self.config.attribute_dim;
        (0..n)
            .map(|j| Prediction {
                consistency: ConsistencyPrediction::from_logits(logits[j], logits[n + j]),
                attr_ground: sf.attr_ground.as_ref().map(|v| (0..a).map(|k| v[k * sf.count + si[j]]).collect()),
                attr_sat: attr_sat.as_ref().map(|v| (0..a).map(|k| v[k * n + j]).collect()),
            })
            .collect()
    }

    /// Predict `(sample index, alleged time)` tuples in inference mode.
    pub fn predict(&self, samples: &[&Sample], tuples: &[(usize, Timestamp)]) -> Result<Vec<Prediction>, ModelError> {
        check_indices(tuples.iter().map(|t| t.0), samples.len())?;
        let inputs = EncoderInputs::new(samples, self.config.image_size)?;
        let sf = self.encode_samples(&inputs);
        let grid: Vec<Timestamp> = Timestamp::all().collect();
        let tf = self.encode_times(&grid);
        let pairs: Vec<(usize, usize)> = tuples.iter().map(|&(s, t)| (s, t.index())).collect();
        Ok(self.predict_encoded(&sf, &tf, grid.len(), &pairs))
    }

    // ---- training ----

    /// Training-mode forward (batch statistics, caches for backward).
    /// `tuples` pair an index into `samples` with an alleged time.
    pub fn forward_train(&mut self, inputs: &EncoderInputs, tuples: &[(usize, Timestamp)]) -> Result<RawOutputs, ModelError> {
        let nu = inputs.count;
        check_indices(tuples.iter().map(|t| t.0), nu)?;
        let f = self.config.feature_dim;
        let nt = tuples.len();
        let idx: Vec<usize> = tuples.iter().map(|t| t.0).collect();
        let times: Vec<Timestamp> = tuples.iter().map(|t| t.1).collect();

        let fg = self.ground.forward_train(&inputs.ground, nu);
        let fs = self.satellite.as_mut().map(|e| e.forward_train(&inputs.satellite, nu));
        let fl = self.location.as_mut().map(|e| e.forward_train(inputs.location.clone(), nu));
        let ft = self.time.forward_train(time_inputs(&times), nt);

        let g = gather_cols(&fg, f, nu, &idx);
        let s = fs.as_ref().map(|v| gather_cols(v, f, nu, &idx));
        let l = fl.as_ref().map(|v| gather_cols(v, f, nu, &idx));
        let mut parts: Vec<&[f64]> = vec![&g];
        parts.extend(s.as_deref());
        parts.extend(l.as_deref());
        parts.push(&ft);
        let xc = self.stack_inputs(&parts, nt);
        let xa = self.attr_sat.is_some().then(|| self.stack_inputs(&parts[1..], nt));
        let logits = self.consistency.forward_train(xc, nt);
        let attr_ground = self.attr_ground.as_mut().map(|b| b.forward_train(fg, nu));
        let attr_sat = match (self.attr_sat.as_mut(), xa) {
            (Some(b), Some(x)) => Some(b.forward_train(x, nt)),
            _ => None,
        };
        self.cache = Some(TrainCache {
            samples: nu,
            sample_idx: idx,
        });
        Ok(RawOutputs {
            logits,
            attr_ground,
            attr_sat,
        })
    }

    /// Backpropagate output gradients into every parameter's `grad`.
    pub fn backward(&mut self, grads: &OutputGrads) {
        let cache = self.cache.take().expect("backward without forward_train");
        let f = self.config.feature_dim;
        let (nu, idx) = (cache.samples, &cache.sample_idx);
        let nt = idx.len();
        let block = f * nt;

        let mut dfg = vec![0.0; f * nu];
        let mut dfs = self.satellite.as_ref().map(|_| vec![0.0; f * nu]);
        let mut dfl = self.location.as_ref().map(|_| vec![0.0; f * nu]);
        let mut dft = vec![0.0; block];

        // consistency input rows: G, [S], [l], t
        let dxc = self.consistency.backward(&grads.logits);
        let mut at = 0;
        scatter_add_cols(&dxc[..block], f, idx, &mut dfg, nu);
        at += block;
        if let Some(d) = dfs.as_mut() {
            scatter_add_cols(&dxc[at..at + block], f, idx, d, nu);
            at += block;
        }
        if let Some(d) = dfl.as_mut() {
            scatter_add_cols(&dxc[at..at + block], f, idx, d, nu);
            at += block;
        }
        dft.iter_mut().zip(&dxc[at..]).for_each(|(a, b)| *a += b);

        if let (Some(b), Some(g)) = (self.attr_sat.as_mut(), grads.attr_sat.as_ref()) {
            let dxa = b.backward(g);
            let mut at = 0;
            if let Some(d) = dfs.as_mut() {
                scatter_add_cols(&dxa[..block], f, idx, d, nu);
                at += block;
            }
            if let Some(d) = dfl.as_mut() {
                scatter_add_cols(&dxa[at..at + block], f, idx, d, nu);
                at += block;
            }
            dft.iter_mut().zip(&dxa[at..]).for_each(|(a, b)| *a += b);
        }
        if let (Some(b), Some(g)) = (self.attr_ground.as_mut(), grads.attr_ground.as_ref()) {
            let d = b.backward(g);
            dfg.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }

        self.time.backward(&dft);
        if let (Some(e), Some(d)) = (self.location.as_mut(), dfl.as_ref()) {
            e.backward(d);
        }
        if let (Some(e), Some(d)) = (self.satellite.as_mut(), dfs.as_ref()) {
            e.backward(d);
        }
        self.ground.backward(&dfg);
        self.clear_cache();
    }

    fn clear_cache(&mut self) {
        self.ground.clear_cache();
        if let Some(e) = &mut self.satellite {
            e.clear_cache();
        }
        if let Some(e) = &mut self.location {
            e.clear_cache();
        }
        self.time.clear_cache();
        self.consistency.clear_cache();
        if let Some(b) = &mut self.attr_ground {
            b.clear_cache();
        }
        if let Some(b) = &mut self.attr_sat {
            b.clear_cache();
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    // ---- parameters ----

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    pub fn weights(&self) -> ModelWeights {
        ModelWeights {
            config: self.config.clone(),
            tensors: self
                .params()
                .into_iter()
                .map(|(name, p)| NamedTensor {
                    name,
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Overwrite every tensor from `w`. Nothing is modified unless every
    /// tensor name and shape matches this model.
    pub fn load_weights(&mut self, w: &ModelWeights) -> Result<(), ModelError> {
        {
            let own = self.params();
            for (name, p) in &own {
                let t = w
                    .tensors
                    .iter()
                    .find(|t| &t.name == name)
                    .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
                if t.shape != p.shape || t.data.len() != p.len() {
                    return Err(ModelError::Shape {
                        name: name.clone(),
                        expected: p.shape.clone(),
                        found: t.shape.clone(),
                    });
                }
            }
            if let Some(t) = w.tensors.iter().find(|t| !own.iter().any(|(n, _)| *n == t.name)) {
                return Err(ModelError::UnexpectedTensor(t.name.clone()));
            }
        }
        for (name, p) in self.params_mut() {
            let t = w.tensors.iter().find(|t| t.name == name).expect("checked above");
            p.value.copy_from_slice(&t.data);
        }
        Ok(())
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self, ModelError> {
        let mut m = Self::new(w.config.clone())?;
        m.load_weights(w)?;
        Ok(m)
    }
}

impl Params for Model {
    fn collect<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.ground.collect("ground", out);
        if let Some(e) = &self.satellite {
            e.collect("satellite", out);
        }
        if let Some(e) = &self.location {
            e.collect("location", out);
        }
        self.time.collect("time", out);
        self.consistency.collect("consistency", out);
        if let Some(b) = &self.attr_ground {
            b.collect("attr_ground", out);
        }
        if let Some(b) = &self.attr_sat {
            b.collect("attr_sat", out);
        }
    }

    fn collect_mut<'a>(&'a mut self, _prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.ground.collect_mut("ground", out);
        if let Some(e) = &mut self.satellite {
            e.collect_mut("satellite", out);
        }
        if let Some(e) = &mut self.location {
            e.collect_mut("location", out);
        }
        self.time.collect_mut("time", out);
        self.consistency.collect_mut("consistency", out);
        if let Some(b) = &mut self.attr_ground {
            b.collect_mut("attr_ground", out);
        }
        if let Some(b) = &mut self.attr_sat {
            b.collect_mut("attr_sat", out);
        }
    }
}

fn check_indices(idx: impl Iterator<Item = usize>, count: usize) -> Result<(), ModelError> {
    for index in idx {
        if index >= count {
            return Err(ModelError::TupleIndex { index, count });
        }
    }
    Ok(())
}

/// Scaled timestamps, `2 × n` (month row, hour row).
fn time_inputs(times: &[Timestamp]) -> Vec<f64> {
    let n = times.len();
    let mut x = vec![0.0; 2 * n];
    for (i, t) in times.iter().enumerate() {
        let s = scale_timestamp(*t);
        x[i] = s.m;
        x[n + i] = s.h;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_dataset;

    fn small(modalities: ModalitySet, ta: bool) -> ModelConfig {
        ModelConfig {
            modalities,
            ta_branches: ta,
            image_size: 16,
            backbone_channels: vec![4, 4],
            seed: 3,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn modality_parsing_requires_ground_and_time() {
        assert_eq!("G,t".parse::<ModalitySet>(), Ok(ModalitySet::GT));
        assert_eq!("G, t, l, S".parse::<ModalitySet>(), Ok(ModalitySet::FULL));
        assert!("t,l".parse::<ModalitySet>().is_err());
        assert!("G,t,x".parse::<ModalitySet>().is_err());
        assert_eq!(ModalitySet::GTS.to_string(), "G,t,S");
    }

    #[test]
    fn consistency_input_width_tracks_modalities() {
        for (m, k) in [(ModalitySet::GT, 2), (ModalitySet::GTL, 3), (ModalitySet::GTS, 3), (ModalitySet::FULL, 4)] {
            let model = Model::new(small(m, true)).unwrap();
            assert_eq!(model.consistency.inputs(), 128 * k);
            assert_eq!(model.attr_sat.as_ref().unwrap().inputs(), 128 * (k - 1));
        }
    }

    #[test]
    fn forward_contracts_hold_for_every_configuration() {
        let data = generate_dataset(2, 3, 1, 16);
        let refs: Vec<&Sample> = data.iter().collect();
        let tuples: Vec<(usize, Timestamp)> = (0..data.len()).map(|i| (i, Timestamp::from_index(i * 37 % 288))).collect();
        for m in [ModalitySet::GT, ModalitySet::GTL, ModalitySet::GTS, ModalitySet::FULL] {
            for ta in [true, false] {
                let model = Model::new(small(m, ta)).unwrap();
                let out = model.predict(&refs, &tuples).unwrap();
                assert_eq!(out.len(), tuples.len());
                for p in &out {
                    assert!((p.consistency.p[0] + p.consistency.p[1] - 1.0).abs() < 1e-6);
                    assert!(p.consistency.p.iter().all(|v| *v >= 0.0));
                    assert_eq!(p.attr_ground.is_some(), ta);
                    for a in p.attr_ground.iter().chain(p.attr_sat.iter()) {
                        assert_eq!(a.len(), 40);
                        assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn encoders_have_separate_weights_and_fixed_width() {
        let data = generate_dataset(1, 1, 2, 16);
        let model = Model::new(small(ModalitySet::FULL, true)).unwrap();
        let g = model.encode_visual(&data[0].ground, ImageRole::Ground).unwrap();
        let s = model.encode_visual(&data[0].ground, ImageRole::Satellite).unwrap();
        assert_eq!(g.len(), 128);
        assert_ne!(g, s);
        assert_eq!(g, model.encode_visual(&data[0].ground, ImageRole::Ground).unwrap());
        let lo = model.encode_time(Timestamp::new(1, 0).unwrap());
        let hi = model.encode_time(Timestamp::new(12, 23).unwrap());
        assert_eq!(lo.len(), 128);
        assert_ne!(lo, hi);
        assert_eq!(model.encode_location(data[0].location).unwrap().len(), 128);
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let data = generate_dataset(1, 1, 2, 8);
        let model = Model::new(small(ModalitySet::GT, false)).unwrap();
        let err = model.predict(&[&data[0]], &[(0, data[0].timestamp)]).unwrap_err();
        assert!(matches!(err, ModelError::ImageSize { expected: 16, found: 8, .. }));
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let data = generate_dataset(2, 3, 4, 16);
        let refs: Vec<&Sample> = data.iter().collect();
        let model = Model::new(small(ModalitySet::FULL, true)).unwrap();
        let tuples: Vec<(usize, Timestamp)> = (0..6).map(|i| (i, Timestamp::from_index(i * 41))).collect();
        let rev_refs: Vec<&Sample> = refs.iter().rev().copied().collect();
        let rev_tuples: Vec<(usize, Timestamp)> = tuples.iter().rev().map(|&(i, t)| (5 - i, t)).collect();
        let a = model.predict(&refs, &tuples).unwrap();
        let b = model.predict(&rev_refs, &rev_tuples).unwrap();
        for i in 0..6 {
            assert_eq!(a[i], b[5 - i]);
        }
    }

    #[test]
    fn weights_round_trip_and_mismatch_names_tensor() {
        let cfg = small(ModalitySet::FULL, true);
        let a = Model::new(cfg.clone()).unwrap();
        let b = Model::from_weights(&a.weights()).unwrap();
        assert_eq!(a.weights(), b.weights());

        let other = Model::new(ModelConfig {
            attribute_dim: 20,
            ..cfg.clone()
        })
        .unwrap();
        let mut c = Model::new(cfg).unwrap();
        let before = c.weights();
        match c.load_weights(&other.weights()) {
            Err(ModelError::Shape { name, .. }) => assert_eq!(name, "attr_ground.head.weight"),
            e => panic!("unexpected {e:?}"),
        }
        assert_eq!(c.weights(), before);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk().validate().is_ok());
        assert!(ModelConfig::miniature().validate().is_ok());
        assert!(ModelConfig::compact().validate().is_ok());
        let bad = ModelConfig {
            image_size: 8,
            ..ModelConfig::desk()
        };
        assert!(Model::new(bad).is_err());
    }
}
