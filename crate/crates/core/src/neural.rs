//! Dense feed-forward networks trained with softmax cross-entropy and Adam.
//!
//! An [`Mlp`] maps a point of its input region to one logit per class.
//! Inputs are first normalized to `[-1, 1]^d` using the region, then
//! optionally expanded with sinusoidal features. Hidden layers use ReLU and
//! the output layer is affine. All arithmetic is `f64`.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoding {
    None,
    /// `[z, sin(2^j π z), cos(2^j π z)]` for `j = 0..frequencies`.
    Fourier {
        frequencies: usize,
    },
}

impl Encoding {
    pub fn output_dim(self, dim: usize) -> usize {
        match self {
            Encoding::None => dim,
            Encoding::Fourier { frequencies } => dim * (2 * frequencies + 1),
        }
    }
}

/// Normalizes `x` to `[-1, 1]^d` over `region` and applies `encoding`,
/// appending to `out`.
pub fn encode_into(x: &[f64], region: &Aabb, encoding: Encoding, out: &mut Vec<f64>) {
    let start = out.len();
    for (i, c) in x.iter().enumerate() {
        let w = region.hi[i] - region.lo[i];
        let z = if w > 0.0 {
            2.0 * (c - region.lo[i]) / w - 1.0
        } else {
            0.0
        };
        out.push(z);
    }
    if let Encoding::Fourier { frequencies } = encoding {
        let d = x.len();
        for j in 0..frequencies {
            let f = (1u64 << j) as f64 * std::f64::consts::PI;
            for i in 0..d {
                out.push((f * out[start + i]).sin());
            }
            for i in 0..d {
                out.push((f * out[start + i]).cos());
            }
        }
    }
}

pub fn encode(x: &[f64], region: &Aabb, encoding: Encoding) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoding.output_dim(x.len()));
    encode_into(x, region, encoding, &mut out);
    out
}

/// One affine layer; `w` is `rows × cols` row-major (`rows` outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Parameter-shaped container used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    /// Flat view in the same order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub encoding: Encoding,
    /// `[d, hidden…, classes]`; the first layer consumes the encoded input.
    pub widths: Vec<usize>,
    /// Region used to normalize inputs.
    pub region: Aabb,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl Mlp {
    /// He-uniform weights (bound `√(6 / fan_in)`), zero biases.
    pub fn init(widths: &[usize], encoding: Encoding, region: Aabb, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer widths {widths:?}"
            )));
        }
        if region.dim() != widths[0] {
            return Err(Error::InvalidArgument(format!(
                "region dimension {} does not match input width {}",
                region.dim(),
                widths[0]
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut fan_in = encoding.output_dim(widths[0]);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for &out in &widths[1..] {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..out * fan_in)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                rows: out,
                cols: fan_in,
                w,
                b: vec![0.0; out],
            });
            fan_in = out;
        }
        Ok(Self {
            encoding,
            widths: widths.to_vec(),
            region,
            layers,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.encoding.output_dim(self.input_dim())
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters, layer by layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        encode(x, &self.region, self.encoding)
    }

    /// Logits for a single point.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let feats = self.encode(x);
        self.forward_features(&feats, 1)
    }

    /// Logits for `batch` rows of encoded features (row-major).
    pub fn forward_features(&self, features: &[f64], batch: usize) -> Vec<f64> {
        let mut act = features.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.rows];
            affine(layer, &act, batch, &mut out);
            if li + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = out;
        }
        act
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad_features(
        &self,
        features: &[f64],
        labels: &[usize],
    ) -> Result<(f64, Gradients)> {
        let batch = labels.len();
        if batch == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let classes = self.classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        debug_assert_eq!(features.len(), batch * self.feature_dim());

        // Forward, keeping every layer's input.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act = features.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.rows];
            affine(layer, &act, batch, &mut out);
            if li + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut act, out));
        }

        // Softmax cross-entropy; `act` becomes dL/dlogits.
        let inv_b = 1.0 / batch as f64;
        let mut loss = 0.0;
        for (row, &label) in act.chunks_exact_mut(classes).zip(labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let shifted_label = row[label] - max;
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            loss += sum.ln() - shifted_label;
            for v in row.iter_mut() {
                *v = *v / sum * inv_b;
            }
            row[label] -= inv_b;
        }
        loss *= inv_b;

        let mut grads = Gradients::zeros_like(self);
        let mut delta = act;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &inputs[li];
            let g = &mut grads.layers[li];
            // dW = deltaᵀ · input
            unsafe {
                matrixmultiply::dgemm(
                    layer.rows,
                    batch,
                    layer.cols,
                    1.0,
                    delta.as_ptr(),
                    1,
                    layer.rows as isize,
                    input.as_ptr(),
                    layer.cols as isize,
                    1,
                    0.0,
                    g.w.as_mut_ptr(),
                    layer.cols as isize,
                    1,
                );
            }
            for row in delta.chunks_exact(layer.rows) {
                for (gb, d) in g.b.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            if li == 0 {
                break;
            }
            // dX = delta · W, masked by the ReLU that produced `input`.
            let mut dx = vec![0.0; batch * layer.cols];
            unsafe {
                matrixmultiply::dgemm(
                    batch,
                    layer.rows,
                    layer.cols,
                    1.0,
                    delta.as_ptr(),
                    layer.rows as isize,
                    1,
                    layer.w.as_ptr(),
                    layer.cols as isize,
                    1,
                    0.0,
                    dx.as_mut_ptr(),
                    layer.cols as isize,
                    1,
                );
            }
            for (d, a) in dx.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = dx;
        }
        Ok((loss, grads))
    }

    /// Convenience wrapper encoding raw points.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Gradients)> {
        let mut feats = Vec::with_capacity(xs.len() * self.feature_dim());
        for x in xs {
            encode_into(x, &self.region, self.encoding, &mut feats);
        }
        self.loss_and_grad_features(&feats, labels)
    }

    pub fn to_file(&self, node_id: usize) -> ModelFile {
        let bytes: Vec<u8> = self.params().iter().flat_map(|v| v.to_le_bytes()).collect();
        ModelFile {
            widths: self.widths.clone(),
            encoding: self.encoding,
            seed: self.seed,
            node_id,
            region: self.region.clone(),
            params: BASE64.encode(bytes),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let mut model = Mlp::init(&file.widths, file.encoding, file.region.clone(), file.seed)?;
        let bytes = BASE64
            .decode(&file.params)
            .map_err(|e| Error::Format(format!("parameter blob: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format(
                "parameter blob is not a multiple of 8 bytes".into(),
            ));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_params(&flat)?;
        Ok(model)
    }
}

/// `out = input · Wᵀ + b` for `batch` rows.
fn affine(layer: &Layer, input: &[f64], batch: usize, out: &mut [f64]) {
    for row in out.chunks_exact_mut(layer.rows) {
        row.copy_from_slice(&layer.b);
    }
    unsafe {
        matrixmultiply::dgemm(
            batch,
            layer.cols,
            layer.rows,
            1.0,
            input.as_ptr(),
            layer.cols as isize,
            1,
            layer.w.as_ptr(),
            1,
            layer.cols as isize,
            1.0,
            out.as_mut_ptr(),
            layer.rows as isize,
            1,
        );
    }
}

/// Serialized model: JSON header plus base64 little-endian parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub widths: Vec<usize>,
    pub encoding: Encoding,
    pub seed: u64,
    pub node_id: usize,
    pub region: Aabb,
    pub params: String,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Gradients,
    pub v: Gradients,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(model: &Mlp, config: AdamConfig) -> Self {
        Self {
            t: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            config,
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.m.layers[li];
            let v = &mut self.v.layers[li];
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            };
            update(&mut layer.w, &g.w, &mut m.w, &mut v.w);
            update(&mut layer.b, &g.b, &mut m.b, &mut v.b);
        }
    }
}
