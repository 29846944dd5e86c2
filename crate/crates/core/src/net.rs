//! Fully-connected SiLU network with input jets and parameter gradients.
//!
//! A batch is pushed through the layers as a single matrix holding several
//! column blocks of width `B`: the values, one block of first directional
//! derivatives per requested axis, and one block of second derivatives per
//! requested axis pair. Parameter gradients of any loss built from those
//! blocks are obtained by reverse accumulation through the same blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const CHECKPOINT_MAGIC: &str = "sgm-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Input encoding applied before the first layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Identity,
    /// `x -> [sin(2 pi B x), cos(2 pi B x)]` with a fixed frequency matrix.
    Fourier { freqs: DMatrix<f64> },
}

impl Encoder {
    fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            Encoder::Identity => in_dim,
            Encoder::Fourier { freqs } => 2 * freqs.nrows(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    #[default]
    Identity,
    Fourier { features: usize, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    encoder: Encoder,
    in_dim: usize,
}

/// Which derivatives a jet evaluation carries.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct JetSpec {
    /// Input axes with first derivatives.
    pub first: Vec<usize>,
    /// Axis pairs with second derivatives; both axes must appear in `first`.
    pub second: Vec<(usize, usize)>,
}

impl JetSpec {
    pub fn value_only() -> Self {
        Self::default()
    }

    /// First derivatives along `axes` and the pure second derivatives.
    pub fn with_laplacian(axes: &[usize]) -> Self {
        Self { first: axes.to_vec(), second: axes.iter().map(|&a| (a, a)).collect() }
    }

    /// First derivatives along `axes` and every pair `i <= j`.
    pub fn full(axes: &[usize]) -> Self {
        let mut second = Vec::new();
        for (i, &a) in axes.iter().enumerate() {
            for &b in &axes[i..] {
                second.push((a, b));
            }
        }
        Self { first: axes.to_vec(), second }
    }

    pub fn n_blocks(&self) -> usize {
        1 + self.first.len() + self.second.len()
    }

    fn slot(&self, axis: usize) -> usize {
        self.first.iter().position(|&a| a == axis).expect("axis validated")
    }

    fn validate(&self, in_dim: usize) -> Result<()> {
        if let Some(&a) = self.first.iter().find(|&&a| a >= in_dim) {
            return Err(Error::InvalidArgument(format!("jet axis {a} out of range for input dimension {in_dim}")));
        }
        for &(a, b) in &self.second {
            if !self.first.contains(&a) || !self.first.contains(&b) {
                return Err(Error::InvalidArgument(format!("second-derivative pair ({a}, {b}) needs both first derivatives")));
            }
        }
        Ok(())
    }
}

/// Derivatives of the output at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct JetValue {
    pub value: Vec<f64>,
    /// One vector per direction, in request order.
    pub first: Vec<Vec<f64>>,
    /// One vector per pair `(i, j)`, `i <= j` over the direction list.
    pub second: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Result of a batched jet evaluation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct JetTape {
    spec: JetSpec,
    batch: usize,
    output: DMatrix<f64>,
    inputs: Vec<DMatrix<f64>>,
    act: Vec<Activation>,
}

#[derive(Clone, Debug)]
struct Activation {
    pre: DMatrix<f64>,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    d3: DMatrix<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// SiLU and its first three derivatives.
pub fn silu(z: f64) -> [f64; 4] {
    let s = sigmoid(z);
    let p = s * (1.0 - s);
    let t = 1.0 - 2.0 * s;
    let q = 2.0 + z * t;
    [z * s, s * (1.0 + z * (1.0 - s)), p * q, p * t * q + p * (t - 2.0 * z * p)]
}

impl JetTape {
    pub fn spec(&self) -> &JetSpec {
        &self.spec
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// All output blocks, `out_dim x (n_blocks * B)`.
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }

    pub fn value(&self) -> DMatrix<f64> {
        self.block(0)
    }

    pub fn first(&self, axis: usize) -> DMatrix<f64> {
        self.block(1 + self.spec.slot(axis))
    }

    pub fn second(&self, a: usize, b: usize) -> DMatrix<f64> {
        let k = self
            .spec
            .second
            .iter()
            .position(|&(i, j)| (i, j) == (a, b) || (j, i) == (a, b))
            .expect("pair requested in the jet spec");
        self.block(1 + self.spec.first.len() + k)
    }

    fn block(&self, k: usize) -> DMatrix<f64> {
        self.output.columns(k * self.batch, self.batch).into_owned()
    }

    /// Column offset of the value block (0), a first-derivative block or a
    /// second-derivative block, for assembling `grad_out`.
    pub fn first_offset(&self, axis: usize) -> usize {
        (1 + self.spec.slot(axis)) * self.batch
    }

    pub fn second_offset(&self, a: usize, b: usize) -> usize {
        let k = self.spec.second.iter().position(|&(i, j)| (i, j) == (a, b) || (j, i) == (a, b)).expect("pair");
        (1 + self.spec.first.len() + k) * self.batch
    }

    /// Parameter gradient of a loss whose derivative with respect to the
    /// output blocks is `grad_out` (same shape as [`JetTape::output`]).
    pub fn backward(&self, net: &Network, grad_out: &DMatrix<f64>) -> Result<Gradient> {
        if grad_out.shape() != self.output.shape() {
            return Err(Error::DimensionMismatch { expected: self.output.len(), got: grad_out.len() });
        }
        let b = self.batch;
        let n1 = self.spec.first.len();
        let n_layers = net.layers.len();
        let mut grads = vec![None; n_layers];
        let mut g = grad_out.clone();
        for l in (0..n_layers).rev() {
            let gz = if l + 1 == n_layers { g } else { activation_backward(&self.act[l], &g, &self.spec, b, n1) };
            let gw = &gz * self.inputs[l].transpose();
            let gb: DVector<f64> = gz.columns(0, b).column_sum();
            if l > 0 {
                g = net.layers[l].w.transpose() * &gz;
            } else {
                g = DMatrix::zeros(0, 0);
            }
            grads[l] = Some(Layer { w: gw, b: gb });
        }
        let grad = Gradient { layers: grads.into_iter().map(|g| g.expect("filled")).collect() };
        if let Some((l, _)) = grad
            .layers
            .iter()
            .enumerate()
            .find(|(_, layer)| layer.w.iter().chain(layer.b.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!("parameter gradient of layer {l} over a batch of {b} points")));
        }
        Ok(grad)
    }
}

fn activation_backward(act: &Activation, ga: &DMatrix<f64>, spec: &JetSpec, b: usize, n1: usize) -> DMatrix<f64> {
    let rows = ga.nrows();
    let mut gz = DMatrix::zeros(rows, ga.ncols());
    let z = |k: usize, r: usize, c: usize| act.pre[(r, k * b + c)];
    for c in 0..b {
        for r in 0..rows {
            let (s1, s2, s3) = (act.d1[(r, c)], act.d2[(r, c)], act.d3[(r, c)]);
            let mut g0 = s1 * ga[(r, c)];
            for i in 0..n1 {
                let gi = ga[(r, (1 + i) * b + c)];
                g0 += s2 * z(1 + i, r, c) * gi;
                gz[(r, (1 + i) * b + c)] += s1 * gi;
            }
            for (k, &(a, bb)) in spec.second.iter().enumerate() {
                let blk = 1 + n1 + k;
                let gij = ga[(r, blk * b + c)];
                if gij == 0.0 {
                    continue;
                }
                let (ia, ib) = (1 + spec.slot(a), 1 + spec.slot(bb));
                let (za, zb, zab) = (z(ia, r, c), z(ib, r, c), z(blk, r, c));
                g0 += (s3 * za * zb + s2 * zab) * gij;
                gz[(r, ia * b + c)] += s2 * zb * gij;
                gz[(r, ib * b + c)] += s2 * za * gij;
                gz[(r, blk * b + c)] += s1 * gij;
            }
            gz[(r, c)] = g0;
        }
    }
    gz
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for r in 0..l.w.nrows() {
            for c in 0..l.w.ncols() {
                out.push(l.w[(r, c)]);
            }
        }
        out.extend(l.b.iter());
    }
    out
}

impl Network {
    /// Xavier-uniform weights, zero biases. `depth` counts hidden layers.
    pub fn new(in_dim: usize, width: usize, depth: usize, out_dim: usize, encoder: EncoderSpec, seed: u64) -> Result<Self> {
        if in_dim == 0 || width == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("network dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = match encoder {
            EncoderSpec::Identity => Encoder::Identity,
            EncoderSpec::Fourier { features, scale } => {
                if features == 0 || !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::InvalidArgument("fourier encoder needs features >= 1 and scale > 0".into()));
                }
                let normal = rand_distr::Normal::new(0.0, scale).expect("valid scale");
                Encoder::Fourier { freqs: DMatrix::from_fn(features, in_dim, |_, _| rng.sample(normal)) }
            }
        };
        let mut dims = vec![encoder.out_dim(in_dim)];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .map(|d| {
                let a = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Layer { w: DMatrix::from_fn(d[1], d[0], |_, _| rng.random_range(-a..a)), b: DVector::zeros(d[1]) }
            })
            .collect();
        Ok(Self { layers, encoder, in_dim })
    }

    pub fn from_layers(in_dim: usize, encoder: Encoder, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if let Encoder::Fourier { freqs } = &encoder {
            if freqs.ncols() != in_dim {
                return Err(Error::DimensionMismatch { expected: in_dim, got: freqs.ncols() });
            }
        }
        let mut prev = encoder.out_dim(in_dim);
        for l in &layers {
            if l.w.ncols() != prev {
                return Err(Error::DimensionMismatch { expected: prev, got: l.w.ncols() });
            }
            if l.b.len() != l.w.nrows() {
                return Err(Error::DimensionMismatch { expected: l.w.nrows(), got: l.b.len() });
            }
            prev = l.w.nrows();
        }
        if layers.iter().any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self { layers, encoder, in_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer, `W` row-major then `b`.
    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: theta.len() });
        }
        let mut it = theta.iter().copied();
        for l in &mut self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    l.w[(r, c)] = it.next().expect("length checked");
                }
            }
            for v in l.b.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Applies `theta <- theta + scale * delta` layer-wise.
    pub fn axpy(&mut self, scale: f64, delta: &Gradient) {
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            l.w += &d.w * scale;
            l.b += &d.b * scale;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: x.len() });
        }
        let xs = DMatrix::from_column_slice(self.in_dim, 1, x);
        Ok(self.forward_batch(&xs).column(0).iter().copied().collect())
    }

    /// Values only, one point per column.
    pub fn forward_batch(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = self.encode(xs, &JetSpec::value_only());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if l + 1 < self.layers.len() {
                z.apply(|v| *v = silu(*v)[0]);
            }
            h = z;
        }
        h
    }

    pub fn forward_jet(&self, x: &[f64], directions: &[usize]) -> Result<JetValue> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: x.len() });
        }
        let spec = JetSpec::full(directions);
        let tape = self.jet_batch(&DMatrix::from_column_slice(self.in_dim, 1, x), &spec)?;
        let col = |k: usize| tape.output.column(k).iter().copied().collect::<Vec<_>>();
        Ok(JetValue {
            value: col(0),
            first: (0..spec.first.len()).map(|i| col(1 + i)).collect(),
            second: (0..spec.second.len()).map(|i| col(1 + spec.first.len() + i)).collect(),
        })
    }

    /// Jet propagation of a batch (one point per column of `xs`).
    pub fn jet_batch(&self, xs: &DMatrix<f64>, spec: &JetSpec) -> Result<JetTape> {
        if xs.nrows() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: xs.nrows() });
        }
        spec.validate(self.in_dim)?;
        let b = xs.ncols();
        let n1 = spec.first.len();
        let nb = spec.n_blocks();
        let mut h = self.encode(xs, spec);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &h;
            for c in 0..b {
                let mut col = z.column_mut(c);
                col += &layer.b;
            }
            inputs.push(h);
            if l + 1 == self.layers.len() {
                h = z;
                break;
            }
            let rows = z.nrows();
            let mut d = [(); 4].map(|_| DMatrix::zeros(rows, b));
            for c in 0..b {
                for r in 0..rows {
                    let s = silu(z[(r, c)]);
                    for k in 0..4 {
                        d[k][(r, c)] = s[k];
                    }
                }
            }
            let mut a = DMatrix::zeros(rows, nb * b);
            for c in 0..b {
                for r in 0..rows {
                    let (s0, s1, s2) = (d[0][(r, c)], d[1][(r, c)], d[2][(r, c)]);
                    a[(r, c)] = s0;
                    for i in 0..n1 {
                        let k = (1 + i) * b + c;
                        a[(r, k)] = s1 * z[(r, k)];
                    }
                    for (p, &(i, j)) in spec.second.iter().enumerate() {
                        let k = (1 + n1 + p) * b + c;
                        let zi = z[(r, (1 + spec.slot(i)) * b + c)];
                        let zj = z[(r, (1 + spec.slot(j)) * b + c)];
                        a[(r, k)] = s2 * zi * zj + s1 * z[(r, k)];
                    }
                }
            }
            let [_, d1, d2, d3] = d;
            acts.push(Activation { pre: z, d1, d2, d3 });
            h = a;
        }
        Ok(JetTape { spec: spec.clone(), batch: b, output: h, inputs, act: acts })
    }

    /// Encoded input blocks for the first layer.
    fn encode(&self, xs: &DMatrix<f64>, spec: &JetSpec) -> DMatrix<f64> {
        let b = xs.ncols();
        let n1 = spec.first.len();
        let nb = spec.n_blocks();
        match &self.encoder {
            Encoder::Identity => {
                let mut h = DMatrix::zeros(self.in_dim, nb * b);
                h.columns_mut(0, b).copy_from(xs);
                for (i, &a) in spec.first.iter().enumerate() {
                    for c in 0..b {
                        h[(a, (1 + i) * b + c)] = 1.0;
                    }
                }
                h
            }
            Encoder::Fourier { freqs } => {
                let m = freqs.nrows();
                let tau = 2.0 * std::f64::consts::PI;
                let z = freqs * xs * tau;
                let mut h = DMatrix::zeros(2 * m, nb * b);
                for c in 0..b {
                    for f in 0..m {
                        let (s, co) = z[(f, c)].sin_cos();
                        h[(f, c)] = s;
                        h[(m + f, c)] = co;
                        for (i, &a) in spec.first.iter().enumerate() {
                            let za = tau * freqs[(f, a)];
                            h[(f, (1 + i) * b + c)] = co * za;
                            h[(m + f, (1 + i) * b + c)] = -s * za;
                        }
                        for (p, &(i, j)) in spec.second.iter().enumerate() {
                            let zz = tau * tau * freqs[(f, i)] * freqs[(f, j)];
                            h[(f, (1 + n1 + p) * b + c)] = -s * zz;
                            h[(m + f, (1 + n1 + p) * b + c)] = -co * zz;
                        }
                    }
                }
                h
            }
        }
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "in_dim {}", self.in_dim);
        match &self.encoder {
            Encoder::Identity => {
                let _ = writeln!(s, "encoder identity");
            }
            Encoder::Fourier { freqs } => {
                let _ = writeln!(s, "encoder fourier {}", freqs.nrows());
                let _ = writeln!(s, "{}", join(freqs.transpose().iter()));
            }
        }
        let _ = writeln!(s, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(s, "layer {} {}", l.w.nrows(), l.w.ncols());
            let _ = writeln!(s, "{}", join(l.w.transpose().iter()));
            let _ = writeln!(s, "{}", join(l.b.iter()));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("unexpected end of checkpoint, expected {what}") })
        };
        let (line, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse { line, msg: format!("unknown checkpoint header `{magic}`") });
        }
        let (line, t) = next("in_dim")?;
        let in_dim = keyed(line, t, "in_dim")?[0];
        let (line, t) = next("encoder")?;
        let encoder = match t.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["encoder", "identity"] => Encoder::Identity,
            ["encoder", "fourier", m] => {
                let m: usize = m.parse().map_err(|_| Error::Parse { line, msg: "invalid feature count".into() })?;
                let (line, t) = next("fourier frequencies")?;
                let v = floats(line, t, m * in_dim)?;
                Encoder::Fourier { freqs: DMatrix::from_row_slice(m, in_dim, &v) }
            }
            _ => return Err(Error::Parse { line, msg: format!("invalid encoder line `{t}`") }),
        };
        let (line, t) = next("layers")?;
        let n_layers = keyed(line, t, "layers")?[0];
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (line, t) = next("layer shape")?;
            let shape = keyed(line, t, "layer")?;
            if shape.len() != 2 {
                return Err(Error::Parse { line, msg: "layer line needs rows and cols".into() });
            }
            let (rows, cols) = (shape[0], shape[1]);
            let (line, t) = next("weights")?;
            let w = floats(line, t, rows * cols)?;
            let (line, t) = next("biases")?;
            let b = floats(line, t, rows)?;
            layers.push(Layer { w: DMatrix::from_row_slice(rows, cols, &w), b: DVector::from_vec(b) });
        }
        Self::from_layers(in_dim, encoder, layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&fs::read_to_string(path)?)
    }
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn keyed(line: usize, text: &str, key: &str) -> Result<Vec<usize>> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse { line, msg: format!("expected `{key}`") });
    }
    parts
        .map(|p| p.parse().map_err(|_| Error::Parse { line, msg: format!("invalid integer `{p}`") }))
        .collect()
}

fn floats(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|p| p.parse().map_err(|_| Error::Parse { line, msg: format!("invalid number `{p}`") }))
        .collect::<Result<_>>()?;
    if v.len() != expected {
        return Err(Error::Parse { line, msg: format!("expected {expected} values, found {}", v.len()) });
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Step-wise exponential decay `lr * gamma^floor(t / every)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr: f64,
    pub gamma: f64,
    pub every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { lr: 1e-3, gamma: 0.95, every: 4000 }
    }
}

impl LrSchedule {
    pub fn at(&self, t: u64) -> f64 {
        let k = if self.every == 0 { 0 } else { t / self.every };
        self.lr * self.gamma.powi(k.min(i32::MAX as u64) as i32)
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    schedule: LrSchedule,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Option<Vec<Layer>>,
    v: Option<Vec<Layer>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: LrSchedule) -> Result<Self> {
        if !(schedule.lr > 0.0 && schedule.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", schedule.lr)));
        }
        if !(schedule.gamma > 0.0 && schedule.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("decay factor must lie in (0, 1], got {}", schedule.gamma)));
        }
        Ok(Self { kind, schedule, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: None, v: None })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, LrSchedule { lr, gamma: 1.0, every: 0 })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.at(self.t)
    }

    pub fn step(&mut self, net: &mut Network, grad: &Gradient) -> Result<()> {
        if grad.layers.len() != net.layers.len()
            || grad.layers.iter().zip(&net.layers).any(|(g, l)| g.w.shape() != l.w.shape() || g.b.len() != l.b.len())
        {
            return Err(Error::DimensionMismatch { expected: net.n_params(), got: grad.flatten().len() });
        }
        let lr = self.schedule.at(self.t);
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => net.axpy(-lr, grad),
            OptimizerKind::Adam => {
                let zeros = || grad.layers.iter().map(|l| Layer { w: l.w.map(|_| 0.0), b: l.b.map(|_| 0.0) }).collect();
                let m = self.m.get_or_insert_with(zeros);
                let v = self.v.get_or_insert_with(zeros);
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
                let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
                let eps = self.eps;
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (((l, g), ml), vl) in net.layers.iter_mut().zip(&grad.layers).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((p, &g), m), v) in l.w.iter_mut().zip(g.w.iter()).zip(ml.w.iter_mut()).zip(vl.w.iter_mut()) {
                        update(p, g, m, v);
                    }
                    for (((p, &g), m), v) in l.b.iter_mut().zip(g.b.iter()).zip(ml.b.iter_mut()).zip(vl.b.iter_mut()) {
                        update(p, g, m, v);
                    }
                }
            }
        }
        Ok(())
    }
}
