//! Dense-network substrate: forward pass with an activation tape, exact
//! backward pass, SGD/Adam steps and a JSON checkpoint format.
//!
//! Everything is `f64`. Batches are row-major matrices with one sample per
//! row. Weight matrices are stored `[out, in]` so that each output unit is a
//! contiguous dot product.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "matrix buffer",
                format!("{rows}x{cols} = {}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stack equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Columns `range` of every row, as a new matrix.
    pub fn column_slice(&self, range: Range<usize>) -> Matrix {
        let width = range.len();
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[range.clone()]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Concatenate matrices with equal row counts side by side.
    pub fn hconcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            if m.rows != rows {
                return Err(Error::dim("hconcat rows", rows, m.rows));
            }
        }
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One fully connected layer, weights stored `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let (n, out) = (x.rows(), self.output_dim());
        let mut pre = Matrix::zeros(n, out);
        let mut post = Matrix::zeros(n, out);
        for b in 0..n {
            let xb = x.row(b);
            for i in 0..out {
                let w = self.weights.row(i);
                let mut acc = 0.0;
                for (wj, xj) in w.iter().zip(xb) {
                    acc += wj * xj;
                }
                let z = acc + self.bias[i];
                pre.set(b, i, z);
                post.set(b, i, self.activation.apply(z));
            }
        }
        (pre, post)
    }

    /// Returns (dW, db, dx) given the gradient w.r.t. this layer's output.
    fn backward(&self, x: &Matrix, pre: &Matrix, upstream: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
        let (n, out, inp) = (x.rows(), self.output_dim(), self.input_dim());
        let mut dw = Matrix::zeros(out, inp);
        let mut db = vec![0.0; out];
        let mut dx = Matrix::zeros(n, inp);
        for b in 0..n {
            let xb = x.row(b);
            for i in 0..out {
                let g = upstream.get(b, i) * self.activation.derivative(pre.get(b, i));
                if g == 0.0 {
                    continue;
                }
                db[i] += g;
                for (d, xj) in dw.row_mut(i).iter_mut().zip(xb) {
                    *d += g * xj;
                }
                let w = self.weights.row(i);
                for (d, wj) in dx.row_mut(b).iter_mut().zip(w) {
                    *d += g * wj;
                }
            }
        }
        (dw, db, dx)
    }
}

/// Activation cache produced by a forward pass; consumed by `backward`.
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    layers: Range<usize>,
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Tape {
    pub fn layers(&self) -> Range<usize> {
        self.layers.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for a contiguous range of layers plus the gradient w.r.t. the
/// range's input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub first_layer: usize,
    pub layers: Vec<DenseGrad>,
    pub input: Matrix,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.data_mut().iter_mut().for_each(|v| *v *= factor);
            g.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn zero(&mut self) {
        self.scale(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Dense>,
    version: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases. `dims` has one more entry than
    /// `activations`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::Config(format!(
                "{} layer dims do not match {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
                Dense {
                    weights: Matrix { rows: fan_out, cols: fan_in, data },
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dim(format!("layer {k} bias"), l.output_dim(), l.bias.len()));
            }
            if !l.weights.is_finite() || l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: k,
                    detail: "non-finite parameter".into(),
                });
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(
                    format!("layer {} input", k + 1),
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the parameters. Invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer (weights, then bias).
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Tape)> {
        self.forward_range(0..self.layers.len(), x)
    }

    /// Run layers `range` only; the tape covers exactly those layers.
    pub fn forward_range(&self, range: Range<usize>, x: &Matrix) -> Result<(Matrix, Tape)> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::Config(format!(
                "layer range {range:?} invalid for {} layers",
                self.layers.len()
            )));
        }
        let expected = self.layers[range.start].input_dim();
        if x.cols() != expected {
            return Err(Error::dim(
                format!("input to layer {}", range.start),
                format!("[batch, {expected}]"),
                format!("[{}, {}]", x.rows(), x.cols()),
            ));
        }
        let mut inputs = Vec::with_capacity(range.len());
        let mut pre = Vec::with_capacity(range.len());
        let mut current = x.clone();
        for layer in &self.layers[range.clone()] {
            let (z, a) = layer.forward(&current);
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        Ok((
            current,
            Tape {
                version: self.version,
                layers: range,
                inputs,
                pre,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<Gradients> {
        if tape.version != self.version {
            return Err(Error::Contract(format!(
                "tape recorded at parameter version {} but network is at version {}",
                tape.version, self.version
            )));
        }
        if tape.layers.end > self.layers.len() {
            return Err(Error::Contract("tape covers layers this network does not have".into()));
        }
        let last = &tape.pre[tape.pre.len() - 1];
        if upstream.shape() != last.shape() {
            return Err(Error::dim(
                "upstream gradient",
                format!("{:?}", last.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut grads = Vec::with_capacity(tape.layers.len());
        let mut g = upstream.clone();
        for (slot, k) in tape.layers.clone().enumerate().rev() {
            let layer = &self.layers[k];
            if tape.inputs[slot].cols() != layer.input_dim() || tape.pre[slot].cols() != layer.output_dim() {
                return Err(Error::Contract(format!("tape shape does not match layer {k}")));
            }
            let (dw, db, dx) = layer.backward(&tape.inputs[slot], &tape.pre[slot], &g);
            grads.push(DenseGrad { weights: dw, bias: db });
            g = dx;
        }
        grads.reverse();
        Ok(Gradients {
            first_layer: tape.layers.start,
            layers: grads,
            input: g,
        })
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    activation: l.activation,
                    weights: l.weights.data().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        let layers = ckpt
            .layers
            .iter()
            .map(|l| {
                Ok(Dense {
                    weights: Matrix::from_vec(l.output_dim, l.input_dim, l.weights.clone())?,
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

/// On-disk network: layer dims, activation names, row-major weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const VFL_LEARNING_RATE: f64 = 3e-4;
pub const MI_LEARNING_RATE: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    // per layer: (weights, bias) moments
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {learning_rate}")));
        }
        Ok(Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update. `grads` may cover a sub-range of the layers.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        let range = grads.first_layer..grads.first_layer + grads.layers.len();
        if range.end > net.layers.len() {
            return Err(Error::dim("gradient layer count", net.layers.len(), range.end));
        }
        for (g, k) in grads.layers.iter().zip(range.clone()) {
            let l = &net.layers[k];
            if g.weights.shape() != l.weights.shape() || g.bias.len() != l.bias.len() {
                return Err(Error::dim(
                    format!("gradient of layer {k}"),
                    format!("{:?}", l.weights.shape()),
                    format!("{:?}", g.weights.shape()),
                ));
            }
            if !g.weights.is_finite() || g.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: k,
                    detail: "non-finite gradient".into(),
                });
            }
        }
        if self.kind == OptimizerKind::Adam && self.m.is_empty() {
            let zeros: Vec<_> = net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.data().len()], vec![0.0; l.bias.len()]))
                .collect();
            self.m = zeros.clone();
            self.v = zeros;
        }
        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (g, k) in grads.layers.iter().zip(range) {
                    let l = &mut net.layers[k];
                    for (p, d) in l.weights.data_mut().iter_mut().zip(g.weights.data()) {
                        *p -= lr * d;
                    }
                    for (p, d) in l.bias.iter_mut().zip(&g.bias) {
                        *p -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                };
                for (g, k) in grads.layers.iter().zip(range) {
                    let l = &mut net.layers[k];
                    let (mw, mb) = &mut self.m[k];
                    let (vw, vb) = &mut self.v[k];
                    update(l.weights.data_mut(), g.weights.data(), mw, vw);
                    update(&mut l.bias, &g.bias, mb, vb);
                }
            }
        }
        net.version += 1;
        Ok(())
    }
}
