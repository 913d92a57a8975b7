use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float;

use super::linalg::gemm;
use super::{join, Param, ParamKind, Params, BN_EPS, BN_MOMENTUM};

/// Affine map `Y = W X + b` on feature-major buffers (`W` is `out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Vec<f64>,
    cols: usize,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self::with_fans(inputs, outputs, inputs, outputs, rng)
    }

    /// Dense map whose Xavier limit uses explicit fans (convolutions count
    /// kernel taps on both sides).
    pub fn with_fans(inputs: usize, outputs: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::xavier(&[outputs, inputs], fan_in, fan_out, rng),
            bias: Param::filled(&[outputs], 0.0, ParamKind::Affine),
            input: Vec::new(),
            cols: 0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let (o, i) = (self.outputs(), self.inputs());
        let mut y = vec![0.0; o * cols];
        for r in 0..o {
            y[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v = self.bias.value[r]);
        }
        gemm(o, i, cols, 1.0, &self.weight.value, false, x, false, 1.0, &mut y);
        y
    }

    pub fn forward_train(&mut self, x: Vec<f64>, cols: usize) -> Vec<f64> {
        let y = self.forward(&x, cols);
        self.input = x;
        self.cols = cols;
        y
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let (o, i, n) = (self.outputs(), self.inputs(), self.cols);
        gemm(o, n, i, 1.0, dy, false, &self.input, true, 1.0, &mut self.weight.grad);
        for r in 0..o {
            self.bias.grad[r] += dy[r * n..(r + 1) * n].iter().sum::<f64>();
        }
        let mut dx = vec![0.0; i * n];
        gemm(i, o, n, 1.0, &self.weight.value, true, dy, false, 0.0, &mut dx);
        dx
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = Vec::new();
    }
}

impl Params for Dense {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Batch normalization over the columns of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    cols: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0, ParamKind::Affine),
            beta: Param::filled(&[channels], 0.0, ParamKind::Affine),
            running_mean: Param::filled(&[channels], 0.0, ParamKind::Buffer),
            running_var: Param::filled(&[channels], 1.0, ParamKind::Buffer),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            cols: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Inference: normalize with the running statistics.
    pub fn forward(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        for c in 0..self.channels() {
            let s = self.gamma.value[c] / (self.running_var.value[c] + BN_EPS).sqrt();
            let t = self.beta.value[c] - s * self.running_mean.value[c];
            y[c * cols..(c + 1) * cols].iter_mut().for_each(|v| *v = s * *v + t);
        }
        y
    }

    /// Training: normalize with batch statistics and update running ones.
    pub fn forward_train(&mut self, mut x: Vec<f64>, cols: usize) -> Vec<f64> {
        let ch = self.channels();
        let mut y = vec![0.0; ch * cols];
        self.inv_std.resize(ch, 0.0);
        for c in 0..ch {
            let row = &mut x[c * cols..(c + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            self.inv_std[c] = inv;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for (h, o) in row.iter_mut().zip(&mut y[c * cols..(c + 1) * cols]) {
                *h = (*h - mean) * inv;
                *o = g * *h + b;
            }
            let unbiased = if cols > 1 { var * cols as f64 / (cols - 1) as f64 } else { var };
            self.running_mean.value[c] = BN_MOMENTUM * self.running_mean.value[c] + (1.0 - BN_MOMENTUM) * mean;
            self.running_var.value[c] = BN_MOMENTUM * self.running_var.value[c] + (1.0 - BN_MOMENTUM) * unbiased;
        }
        self.xhat = x;
        self.cols = cols;
        y
    }

    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let n = self.cols;
        let nf = n as f64;
        let mut dx = vec![0.0; dy.len()];
        for c in 0..self.channels() {
            let d = &dy[c * n..(c + 1) * n];
            let h = &self.xhat[c * n..(c + 1) * n];
            let sum_d: f64 = d.iter().sum();
            let sum_dh: f64 = d.iter().zip(h).map(|(a, b)| a * b).sum();
            self.gamma.grad[c] += sum_dh;
            self.beta.grad[c] += sum_d;
            let k = self.gamma.value[c] * self.inv_std[c] / nf;
            for ((o, &dv), &hv) in dx[c * n..(c + 1) * n].iter_mut().zip(d).zip(h) {
                *o = k * (nf * dv - sum_d - hv * sum_dh);
            }
        }
        dx
    }

    pub(crate) fn clear_cache(&mut self) {
        self.xhat = Vec::new();
    }
}

impl Params for BatchNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Mask the gradient where the ReLU output was zero.
pub(crate) fn relu_backward(dy: &mut [f64], out: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Fully connected layer followed by ReLU and batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub fc: Dense,
    pub bn: BatchNorm,
    relu_out: Vec<f64>,
}

impl DenseBlock {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc: Dense::new(inputs, outputs, rng),
            bn: BatchNorm::new(outputs),
            relu_out: Vec::new(),
        }
    }

    pub fn forward(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let mut h = self.fc.forward(x, cols);
        relu_in_place(&mut h);
        self.bn.forward(&h, cols)
    }

    pub fn forward_train(&mut self, x: Vec<f64>, cols: usize) -> Vec<f64> {
        let mut h = self.fc.forward_train(x, cols);
        relu_in_place(&mut h);
        self.relu_out = h.clone();
        self.bn.forward_train(h, cols)
    }

    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let mut d = self.bn.backward(dy);
        relu_backward(&mut d, &self.relu_out);
        self.fc.backward(&d)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.fc.clear_cache();
        self.bn.clear_cache();
        self.relu_out = Vec::new();
    }
}

impl Params for DenseBlock {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.fc.collect(&join(prefix, "fc"), out);
        self.bn.collect(&join(prefix, "bn"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.fc.collect_mut(&join(prefix, "fc"), out);
        self.bn.collect_mut(&join(prefix, "bn"), out);
    }
}

/// Stack of [`DenseBlock`]s with an optional linear head producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub blocks: Vec<DenseBlock>,
    pub head: Option<Dense>,
}

impl Mlp {
    /// `widths` are the block output widths; `head` the logit count, if any.
    pub fn new(inputs: usize, widths: &[usize], head: Option<usize>, rng: &mut impl Rng) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut w = inputs;
        for &o in widths {
            blocks.push(DenseBlock::new(w, o, rng));
            w = o;
        }
        Self {
            blocks,
            head: head.map(|h| Dense::new(w, h, rng)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.blocks.first().map(|b| b.fc.inputs()).or(self.head.as_ref().map(Dense::inputs)).unwrap_or(0)
    }

    pub fn outputs(&self) -> usize {
        match &self.head {
            Some(h) => h.outputs(),
            None => self.blocks.last().map_or(0, |b| b.fc.outputs()),
        }
    }

    pub fn forward(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for b in &self.blocks {
            h = b.forward(&h, cols);
        }
        match &self.head {
            Some(d) => d.forward(&h, cols),
            None => h,
        }
    }

    pub fn forward_train(&mut self, x: Vec<f64>, cols: usize) -> Vec<f64> {
        let mut h = x;
        for b in &mut self.blocks {
            h = b.forward_train(h, cols);
        }
        match &mut self.head {
            Some(d) => d.forward_train(h, cols),
            None => h,
        }
    }

    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let mut d = match &mut self.head {
            Some(h) => h.backward(dy),
            None => dy.to_vec(),
        };
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        d
    }

    pub(crate) fn clear_cache(&mut self) {
        self.blocks.iter_mut().for_each(DenseBlock::clear_cache);
        if let Some(h) = &mut self.head {
            h.clear_cache();
        }
    }
}

impl Params for Mlp {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &alloc::format!("block{i}")), out);
        }
        if let Some(h) = &self.head {
            h.collect(&join(prefix, "head"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &alloc::format!("block{i}")), out);
        }
        if let Some(h) = &mut self.head {
            h.collect_mut(&join(prefix, "head"), out);
        }
    }
}
