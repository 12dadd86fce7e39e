//! The catalyzer network: `linear → batch-norm → ReLU` twice, then a linear
//! projection followed by ℓ2-normalization onto the unit sphere.
//!
//! Parameters live in `f64`; checkpoints store them as `f32`. Backward passes
//! are written out by hand, there is no autograd.

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vecio::{write_file, VectorSet};

pub const DEFAULT_HIDDEN: usize = 1024;
/// Weight of the previous value in the running batch statistics.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
/// Added to the squared norm before the final normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// He-style uniform initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero bias.
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / d_in as f64).sqrt();
        Linear {
            weight: Array2::from_shape_simple_fn((d_out, d_in), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>) -> (LinearGrad, Array2<f64>) {
        let grad = LinearGrad { weight: grad_out.t().dot(x), bias: grad_out.sum_axis(Axis(0)) };
        (grad, grad_out.dot(&self.weight))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Clone, Debug)]
struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(d: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
            running_mean: Array1::zeros(d),
            running_var: Array1::ones(d),
        }
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean;
        // Biased variance, both for normalization and for the running estimate.
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        Zip::from(&mut self.running_mean).and(&mean).for_each(|r, &m| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m);
        Zip::from(&mut self.running_var).and(&var).for_each(|r, &v| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v);
        (y, BatchNormCache { xhat, inv_std })
    }

    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let scale = Zip::from(&self.gamma).and(&self.running_var).map_collect(|&g, &v| g / (v + BN_EPS).sqrt());
        (x - &self.running_mean) * &scale + &self.beta
    }

    fn backward(&self, cache: &BatchNormCache, grad_out: &Array2<f64>) -> (BatchNormGrad, Array2<f64>) {
        let n = grad_out.nrows() as f64;
        let grad =
            BatchNormGrad { gamma: (grad_out * &cache.xhat).sum_axis(Axis(0)), beta: grad_out.sum_axis(Axis(0)) };
        let dxhat = grad_out * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &(&cache.inv_std / n);
        (grad, dx)
    }
}

fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Row-wise `z / sqrt(|z|² + eps)`; returns the output and the smoothed norms.
fn normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z.map_axis(Axis(1), |row| (row.dot(&row) + NORM_EPS).sqrt());
    let y = z / &norms.view().insert_axis(Axis(1));
    (y, norms)
}

/// `y = z / s` with `s = sqrt(|z|² + eps)`:  `dz = g / s - z (z·g) / s³`.
fn normalize_rows_backward(z: &Array2<f64>, norms: &Array1<f64>, grad_y: &Array2<f64>) -> Array2<f64> {
    let zg = (z * grad_y).sum_axis(Axis(1));
    let coef = (&zg / &norms.mapv(|v| v * v * v)).insert_axis(Axis(1));
    grad_y / &norms.view().insert_axis(Axis(1)) - z * &coef
}

/// Everything the backward pass needs from a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Array2<f64>,
    bn1: BatchNormCache,
    a1: Array2<f64>,
    bn2: BatchNormCache,
    a2: Array2<f64>,
    z: Array2<f64>,
    norms: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub fc1: LinearGrad,
    pub bn1: BatchNormGrad,
    pub fc2: LinearGrad,
    pub bn2: BatchNormGrad,
    pub fc3: LinearGrad,
}

impl Gradients {
    /// Flat views in parameter declaration order.
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            flat(&self.fc1.weight),
            flat1(&self.fc1.bias),
            flat1(&self.bn1.gamma),
            flat1(&self.bn1.beta),
            flat(&self.fc2.weight),
            flat1(&self.fc2.bias),
            flat1(&self.bn2.gamma),
            flat1(&self.bn2.beta),
            flat(&self.fc3.weight),
            flat1(&self.fc3.bias),
        ]
    }
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

fn flat1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

/// Maps `R^d_in` onto the unit sphere of `R^d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalyzerModel {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub fc2: Linear,
    pub bn2: BatchNorm,
    pub fc3: Linear,
}

impl CatalyzerModel {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_hidden == 0 || d_out == 0 {
            return Err(Error::arg("network dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(CatalyzerModel {
            d_in,
            d_hidden,
            d_out,
            fc1: Linear::new(d_in, d_hidden, &mut rng),
            bn1: BatchNorm::new(d_hidden),
            fc2: Linear::new(d_hidden, d_hidden, &mut rng),
            bn2: BatchNorm::new(d_hidden),
            fc3: Linear::new(d_hidden, d_out, &mut rng),
        })
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.d_in {
            return Err(Error::arg(format!("input has {} columns, model expects {}", x.ncols(), self.d_in)));
        }
        Ok(())
    }

    /// Eval-mode forward pass using the running batch-norm statistics. Rows are independent.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let a1 = relu(self.bn1.forward_eval(&self.fc1.forward(x)));
        let a2 = relu(self.bn2.forward_eval(&self.fc2.forward(&a1)));
        Ok(normalize_rows(&self.fc3.forward(&a2)).0)
    }

    /// Train-mode forward pass: normalizes with batch statistics and updates the running ones.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Err(Error::arg("batch statistics are undefined for an empty batch"));
        }
        let (b1, bn1) = self.bn1.forward_train(&self.fc1.forward(x));
        let a1 = relu(b1);
        let (b2, bn2) = self.bn2.forward_train(&self.fc2.forward(&a1));
        let a2 = relu(b2);
        let z = self.fc3.forward(&a2);
        let (y, norms) = normalize_rows(&z);
        Ok((y, ForwardCache { x: x.clone(), bn1, a1, bn2, a2, z, norms }))
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Gradients of all parameters and of the input, given the gradient on the outputs.
    pub fn backward(&self, cache: &ForwardCache, grad_y: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if grad_y.dim() != cache.z.dim() {
            return Err(Error::arg(format!(
                "upstream gradient has shape {:?}, outputs have {:?}",
                grad_y.dim(),
                cache.z.dim()
            )));
        }
        let dz = normalize_rows_backward(&cache.z, &cache.norms, grad_y);

        let (fc3, da2) = self.fc3.backward(&cache.a2, &dz);
        let db2 = da2 * &cache.a2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let (bn2, dh2) = self.bn2.backward(&cache.bn2, &db2);
        let (fc2, da1) = self.fc2.backward(&cache.a1, &dh2);
        let db1 = da1 * &cache.a1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let (bn1, dh1) = self.bn1.backward(&cache.bn1, &db1);
        let (fc1, dx) = self.fc1.backward(&cache.x, &dh1);
        Ok((Gradients { fc1, bn1, fc2, bn2, fc3 }, dx))
    }

    /// Trainable parameters in declaration order.
    pub fn parameters(&self) -> [&[f64]; 10] {
        [
            flat(&self.fc1.weight),
            flat1(&self.fc1.bias),
            flat1(&self.bn1.gamma),
            flat1(&self.bn1.beta),
            flat(&self.fc2.weight),
            flat1(&self.fc2.bias),
            flat1(&self.bn2.gamma),
            flat1(&self.bn2.beta),
            flat(&self.fc3.weight),
            flat1(&self.fc3.bias),
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut [f64]; 10] {
        fn m2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("parameters are kept in standard layout")
        }
        fn m1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("parameters are kept in standard layout")
        }
        [
            m2(&mut self.fc1.weight),
            m1(&mut self.fc1.bias),
            m1(&mut self.bn1.gamma),
            m1(&mut self.bn1.beta),
            m2(&mut self.fc2.weight),
            m1(&mut self.fc2.bias),
            m1(&mut self.bn2.gamma),
            m1(&mut self.bn2.beta),
            m2(&mut self.fc3.weight),
            m1(&mut self.fc3.bias),
        ]
    }

    fn running_stats(&self) -> [&[f64]; 4] {
        [
            flat1(&self.bn1.running_mean),
            flat1(&self.bn1.running_var),
            flat1(&self.bn2.running_mean),
            flat1(&self.bn2.running_var),
        ]
    }

    fn running_stats_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.bn1.running_mean.as_slice_mut().unwrap(),
            self.bn1.running_var.as_slice_mut().unwrap(),
            self.bn2.running_mean.as_slice_mut().unwrap(),
            self.bn2.running_var.as_slice_mut().unwrap(),
        ]
    }

    /// Eval-mode transform of a whole vector set, processed in fixed-size chunks.
    pub fn transform(&self, x: &VectorSet) -> Result<VectorSet> {
        const CHUNK: usize = 4096;
        if x.is_empty() {
            return VectorSet::new(self.d_out, Vec::new());
        }
        if x.dim() != self.d_in {
            return Err(Error::arg(format!("input dimension {} does not match model d_in {}", x.dim(), self.d_in)));
        }
        let chunks: Vec<Vec<f32>> = x
            .as_slice()
            .par_chunks(CHUNK * self.d_in)
            .map(|chunk| {
                let rows = chunk.len() / self.d_in;
                let a = Array2::from_shape_fn((rows, self.d_in), |(i, j)| f64::from(chunk[i * self.d_in + j]));
                self.forward_eval(&a).map(|y| y.iter().map(|&v| v as f32).collect())
            })
            .collect::<Result<_>>()?;
        VectorSet::new(self.d_out, chunks.concat())
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

pub fn to_array(v: &VectorSet) -> Array2<f64> {
    Array2::from_shape_fn((v.len(), v.dim()), |(i, j)| f64::from(v.row(i)[j]))
}

pub fn from_array(a: &Array2<f64>) -> Result<VectorSet> {
    VectorSet::new(a.ncols(), a.iter().map(|&v| v as f32).collect())
}

/// Piecewise-constant learning rate: 0.1, then 0.05 from epoch 80, then 0.01 from epoch 120.
pub fn lr_schedule(epoch: usize) -> f64 {
    match epoch {
        0..80 => 0.1,
        80..120 => 0.05,
        _ => 0.01,
    }
}

/// `v ← momentum·v + g;  p ← p − lr·v`
pub fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// SGD with momentum; holds one velocity buffer per parameter tensor.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(model: &CatalyzerModel, lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: model.parameters().iter().map(|p| vec![0.0; p.len()]).collect() }
    }

    /// Applies one update. Refuses non-finite or mis-shaped gradients without touching the model.
    pub fn step(&mut self, model: &mut CatalyzerModel, grads: &Gradients) -> Result<()> {
        let grads = grads.tensors();
        for (i, (g, v)) in grads.iter().zip(&self.velocity).enumerate() {
            if g.len() != v.len() {
                return Err(Error::arg(format!("gradient tensor {i} has {} entries, expected {}", g.len(), v.len())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in parameter tensor {i}")));
            }
        }
        for ((p, g), v) in model.parameters_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            sgd_update(p, g, v, self.lr, self.momentum);
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 6] = b"SPCAT1";
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

impl CatalyzerModel {
    /// Checkpoint bytes: magic, `u32` dimensions, parameters and running
    /// statistics as `f32`, then a CRC-64 of everything after the magic.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for dim in [self.d_in, self.d_hidden, self.d_out] {
            payload.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for tensor in self.parameters().into_iter().chain(self.running_stats()) {
            for &v in tensor {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&payload);
        out.extend_from_slice(&CRC64.checksum(&payload).to_le_bytes());
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 + 12 + 8 {
            return Err(Error::format(bytes.len() as u64, "truncated checkpoint"));
        }
        if &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a catalyzer checkpoint (bad magic or version)"));
        }
        let (payload, crc) = bytes[6..].split_at(bytes.len() - 6 - 8);
        let stored = u64::from_le_bytes(crc.try_into().unwrap());
        if CRC64.checksum(payload) != stored {
            return Err(Error::format((bytes.len() - 8) as u64, "checkpoint checksum mismatch"));
        }
        let dim = |i: usize| u32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let mut model = CatalyzerModel::new(dim(0), dim(1), dim(2), 0)?;
        let expected = 12 + 4 * (model.num_parameters() + 2 * (model.d_hidden * 2));
        if payload.len() != expected {
            return Err(Error::format(
                6,
                format!("checkpoint payload has {} bytes, dimensions imply {expected}", payload.len()),
            ));
        }
        let mut floats = payload[12..].chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
        for tensor in model.parameters_mut() {
            tensor.iter_mut().for_each(|v| *v = floats.next().unwrap());
        }
        for tensor in model.running_stats_mut() {
            tensor.iter_mut().for_each(|v| *v = floats.next().unwrap());
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        CatalyzerModel::from_checkpoint_bytes(&fs::read(path)?)
    }
}
