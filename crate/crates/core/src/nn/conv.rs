use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{relu_backward, relu_in_place, BatchNorm, Dense};
use super::{join, Param, Params};

/// Unfold 3×3 neighbourhoods (zero padding 1) of a `c × (n·h·w)` buffer into
/// a `(c·9) × (n·h·w)` buffer.
fn im2col(x: &[f64], c: usize, n: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let cols = n * plane;
    let mut out = vec![0.0; c * 9 * cols];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut out[(ch * 9 + ky * 3 + kx) * cols..][..cols];
                for img in 0..n {
                    let src = &x[ch * cols + img * plane..][..plane];
                    let dst = &mut row[img * plane..][..plane];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                dst[y * w + xx] = src[sy * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f64], c: usize, n: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let cols = n * plane;
    let mut out = vec![0.0; c * cols];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ch * 9 + ky * 3 + kx) * cols..][..cols];
                for img in 0..n {
                    let src = &row[img * plane..][..plane];
                    let dst = &mut out[ch * cols + img * plane..][..plane];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                dst[sy * w + sx as usize] += src[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled buffer and, per output, the flat index of its source.
fn max_pool(x: &[f64], c: usize, n: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * n * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..c * n {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// `conv3×3 (pad 1) → ReLU → batch norm → 2×2 max pool`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Dense,
    pub bn: BatchNorm,
    in_channels: usize,
    height: usize,
    width: usize,
    images: usize,
    relu_out: Vec<f64>,
    pool_arg: Vec<usize>,
}

impl ConvBlock {
    pub fn new(in_channels: usize, out_channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Dense::with_fans(in_channels * 9, out_channels, in_channels * 9, out_channels * 9, rng),
            bn: BatchNorm::new(out_channels),
            in_channels,
            height,
            width,
            images: 0,
            relu_out: Vec::new(),
            pool_arg: Vec::new(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.outputs()
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (c, h, w) = (self.in_channels, self.height, self.width);
        let col = im2col(x, c, n, h, w);
        let mut y = self.conv.forward(&col, n * h * w);
        relu_in_place(&mut y);
        let y = self.bn.forward(&y, n * h * w);
        max_pool(&y, self.out_channels(), n, h, w).0
    }

    pub fn forward_train(&mut self, x: &[f64], n: usize) -> Vec<f64> {
        let (c, h, w) = (self.in_channels, self.height, self.width);
        self.images = n;
        let col = im2col(x, c, n, h, w);
        let mut y = self.conv.forward_train(col, n * h * w);
        relu_in_place(&mut y);
        self.relu_out = y.clone();
        let y = self.bn.forward_train(y, n * h * w);
        let (out, arg) = max_pool(&y, self.out_channels(), n, h, w);
        self.pool_arg = arg;
        out
    }

    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let (c, h, w, n) = (self.in_channels, self.height, self.width, self.images);
        let mut d = vec![0.0; self.out_channels() * n * h * w];
        for (&i, &g) in self.pool_arg.iter().zip(dy) {
            d[i] += g;
        }
        let mut d = self.bn.backward(&d);
        relu_backward(&mut d, &self.relu_out);
        let dcol = self.conv.backward(&d);
        col2im(&dcol, c, n, h, w)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.bn.clear_cache();
        self.relu_out = Vec::new();
        self.pool_arg = Vec::new();
    }
}

impl Params for ConvBlock {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv.collect(&join(prefix, "conv"), out);
        self.bn.collect(&join(prefix, "bn"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.collect_mut(&join(prefix, "conv"), out);
        self.bn.collect_mut(&join(prefix, "bn"), out);
    }
}

/// Convolutional backbone followed by global average pooling.
/// Input `3 × (n·h·w)`, output `channels × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub blocks: Vec<ConvBlock>,
    images: usize,
}

impl ConvStack {
    pub fn new(in_channels: usize, size: usize, channels: &[usize], rng: &mut impl Rng) -> Self {
        let mut blocks = Vec::with_capacity(channels.len());
        let (mut c, mut s) = (in_channels, size);
        for &o in channels {
            blocks.push(ConvBlock::new(c, o, s, s, rng));
            c = o;
            s /= 2;
        }
        Self { blocks, images: 0 }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(3, ConvBlock::out_channels)
    }

    fn pooled_plane(&self) -> usize {
        let (h, w) = self.blocks.last().map_or((0, 0), ConvBlock::out_size);
        h * w
    }

    fn global_average(&self, x: &[f64], n: usize) -> Vec<f64> {
        let p = self.pooled_plane();
        debug_assert_eq!(x.len(), self.out_channels() * n * p);
        x.chunks_exact(p).map(|c| c.iter().sum::<f64>() / p as f64).collect()
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for b in &self.blocks {
            h = b.forward(&h, n);
        }
        self.global_average(&h, n)
    }

    pub fn forward_train(&mut self, x: &[f64], n: usize) -> Vec<f64> {
        self.images = n;
        let mut h = x.to_vec();
        for b in &mut self.blocks {
            h = b.forward_train(&h, n);
        }
        self.global_average(&h, n)
    }

    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let p = self.pooled_plane();
        let mut d: Vec<f64> = dy.iter().flat_map(|&g| core::iter::repeat(g / p as f64).take(p)).collect();
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        d
    }

    pub(crate) fn clear_cache(&mut self) {
        self.blocks.iter_mut().for_each(ConvBlock::clear_cache);
    }
}

impl Params for ConvStack {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &alloc::format!("block{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &alloc::format!("block{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let (c, n, h, w) = (2, 2, 3, 4);
        let x: Vec<f64> = (0..c * n * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * n * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = im2col(&x, c, n, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, n, h, w).iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn center_tap_reproduces_input() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let col = im2col(&x, 1, 1, 4, 4);
        assert_eq!(&col[4 * 16..5 * 16], &x[..]);
        // top-left tap of the first pixel falls in the padding
        assert_eq!(col[0], 0.0);
    }

    #[test]
    fn max_pool_picks_block_maxima() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0];
        let (y, arg) = max_pool(&x, 1, 1, 2, 4);
        assert_eq!(y, [5.0, 9.0]);
        assert_eq!(arg, [1, 6]);
    }
}
