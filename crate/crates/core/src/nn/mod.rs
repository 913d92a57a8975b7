//! Minimal neural-network building blocks with hand-written backward passes.
//!
//! Activations are stored feature-major: a buffer of `rows × cols` where rows
//! are features (or channels) and columns are batch items (or batch × pixel
//! positions, image-major then row-major). Concatenating feature blocks is
//! then a plain append, and batch normalization always reduces along a row.

mod adam;
mod conv;
mod layers;
pub mod linalg;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float;

pub use adam::{Adam, AdamConfig};
pub use conv::{ConvBlock, ConvStack};
pub use layers::{BatchNorm, Dense, DenseBlock, Mlp};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-3;
/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.99;

/// What a tensor is, which decides decay and trainability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrix or convolution kernel: trainable and L2-penalized.
    Weight,
    /// Bias or batch-norm scale/shift: trainable, not penalized.
    Affine,
    /// Running statistic: exported with the weights but never trained.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl Param {
    pub fn filled(shape: &[usize], v: f64, kind: ParamKind) -> Self {
        let n = shape.iter().product();
        Self {
            value: vec![v; n],
            grad: vec![0.0; n],
            shape: shape.to_vec(),
            kind,
        }
    }

    /// Glorot/Xavier uniform initialization.
    pub fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut p = Self::filled(shape, 0.0, ParamKind::Weight);
        for w in &mut p.value {
            *w = rng.random_range(-limit..limit);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

/// Named view over the tensors of a layer tree.
pub trait Params {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + name.len() + 1);
    s.push_str(prefix);
    if !prefix.is_empty() {
        s.push('.');
    }
    s.push_str(name);
    s
}

/// Take selected columns of a `rows × cols` buffer.
pub fn gather_cols(x: &[f64], rows: usize, cols: usize, idx: &[usize]) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = Vec::with_capacity(rows * idx.len());
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        out.extend(idx.iter().map(|&c| row[c]));
    }
    out
}

/// Adjoint of [`gather_cols`]: accumulate columns back into `dx`.
pub fn scatter_add_cols(dy: &[f64], rows: usize, idx: &[usize], dx: &mut [f64], cols: usize) {
    debug_assert_eq!(dy.len(), rows * idx.len());
    for r in 0..rows {
        let src = &dy[r * idx.len()..(r + 1) * idx.len()];
        let dst = &mut dx[r * cols..(r + 1) * cols];
        for (&c, &v) in idx.iter().zip(src) {
            dst[c] += v;
        }
    }
}
