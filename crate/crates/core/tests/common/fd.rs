//! Central-difference checks of the losses and the network, shared by the
//! gradient tests and the acceptance run. Each returns a relative error.

use ndarray::{Array2, Axis};

use super::*;
use spcat::losses::{combined, koleo, triplet, Triplet};
use spcat::nn::{CatalyzerModel, BN_EPS};

pub fn from_flat(shape: (usize, usize), v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec(shape, v.to_vec()).unwrap()
}

pub fn batch_triplets(n: usize) -> Vec<Triplet> {
    (0..n).map(|i| Triplet { anchor: i, positive: (i + 1) % n, negative: (i + 5) % n }).collect()
}

pub fn koleo_error(n: usize, d: usize, seed: u64) -> f64 {
    let y = random_matrix(n, d, &mut rng(seed));
    let analytic = koleo(y.view()).unwrap().grad;
    let numeric = numeric_grad(y.as_slice().unwrap(), |v| koleo(from_flat(y.dim(), v).view()).unwrap().loss);
    rel_err(analytic.as_slice().unwrap(), &numeric)
}

/// Worst error over `count` random unit triplets of dimension `d`, and how
/// many of them had a positive loss.
pub fn triplet_error(d: usize, count: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut active = 0;
    for _ in 0..count {
        let a = random_unit(d, &mut r);
        let p = random_unit(d, &mut r);
        let n = random_unit(d, &mut r);
        let v = triplet(&a, &p, &n).unwrap();
        if v.loss > 0.0 {
            active += 1;
        }
        let all: Vec<f64> = a.iter().chain(&p).chain(&n).copied().collect();
        let numeric = numeric_grad(&all, |x| triplet(&x[..d], &x[d..2 * d], &x[2 * d..]).unwrap().loss);
        let analytic: Vec<f64> =
            v.grad_anchor.iter().chain(&v.grad_positive).chain(&v.grad_negative).copied().collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    (worst, active)
}

pub fn combined_error(n: usize, d: usize, seed: u64, lambda: f64) -> f64 {
    let y = random_matrix(n, d, &mut rng(seed));
    let triplets = batch_triplets(n);
    let analytic = combined(&y, &triplets, lambda).unwrap().grad;
    let numeric =
        numeric_grad(y.as_slice().unwrap(), |v| combined(&from_flat(y.dim(), v), &triplets, lambda).unwrap().total);
    rel_err(analytic.as_slice().unwrap(), &numeric)
}

/// Loss of the full network in train mode on `x`, with parameter tensor `t`
/// replaced by `values`.
fn network_loss(model: &CatalyzerModel, t: usize, values: &[f64], x: &Array2<f64>, lambda: f64) -> f64 {
    let mut m = model.clone();
    m.parameters_mut()[t].copy_from_slice(values);
    let (y, _) = m.forward_train(x).unwrap();
    combined(&y, &batch_triplets(x.nrows()), lambda).unwrap().total
}

/// Inputs of both ReLU layers under train-mode batch statistics.
fn relu_inputs(model: &CatalyzerModel, x: &Array2<f64>) -> Vec<f64> {
    fn bn(h: &Array2<f64>, gamma: &ndarray::Array1<f64>, beta: &ndarray::Array1<f64>) -> Array2<f64> {
        let n = h.nrows() as f64;
        let mean = h.sum_axis(Axis(0)) / n;
        let var = (h - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / n;
        (h - &mean) / &var.mapv(|v| (v + BN_EPS).sqrt()) * gamma + beta
    }
    let b1 = bn(&model.fc1.forward(x), &model.bn1.gamma, &model.bn1.beta);
    let b2 = bn(&model.fc2.forward(&b1.mapv(|v| v.max(0.0))), &model.bn2.gamma, &model.bn2.beta);
    b1.iter().chain(b2.iter()).copied().collect()
}

/// Smallest distance of the combined loss to one of its kinks: hinge margins
/// and gaps between each row's nearest and second-nearest neighbor.
fn loss_kink_margin(y: &Array2<f64>, triplets: &[Triplet]) -> f64 {
    let dist = |i: usize, j: usize| (&y.row(i) - &y.row(j)).mapv(|v| v * v).sum().sqrt();
    let hinge = triplets
        .iter()
        .map(|t| (dist(t.anchor, t.positive) - dist(t.anchor, t.negative)).abs())
        .fold(f64::INFINITY, f64::min);
    let neighbor = (0..y.nrows())
        .map(|i| {
            let mut d: Vec<f64> = (0..y.nrows()).filter(|&j| j != i).map(|j| dist(i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[1] - d[0]
        })
        .fold(f64::INFINITY, f64::min);
    hinge.min(neighbor)
}

/// First seeded model and batch whose loss is differentiable with a margin
/// well above the finite-difference step.
pub fn smooth_setup(n: usize, d_out: usize, first_seed: u64) -> (CatalyzerModel, Array2<f64>) {
    for seed in first_seed..first_seed + 500 {
        let model = CatalyzerModel::new(6, 8, d_out, seed).unwrap();
        let x = random_matrix(n, 6, &mut rng(seed + 1000));
        let (y, _) = model.clone().forward_train(&x).unwrap();
        let relu_margin = relu_inputs(&model, &x).iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if relu_margin > 1e-2 && loss_kink_margin(&y, &batch_triplets(n)) > 1e-2 {
            return (model, x);
        }
    }
    panic!("no smooth setup found");
}

/// Worst error over every parameter tensor and the input, for a batch of `n`.
pub fn network_error(n: usize, d_out: usize, lambda: f64) -> f64 {
    let (model, x) = smooth_setup(n, d_out, 0);
    let (y, cache) = model.clone().forward_train(&x).unwrap();
    let loss = combined(&y, &batch_triplets(n), lambda).unwrap();
    assert!(loss.rank > 0.0, "setup exercises no triplet");
    let (grads, dx) = model.backward(&cache, &loss.grad).unwrap();
    let mut worst = 0.0f64;
    for (t, (params, analytic)) in model.parameters().iter().zip(grads.tensors()).enumerate() {
        let numeric = numeric_grad(params, |v| network_loss(&model, t, v, &x, lambda));
        worst = worst.max(rel_err(analytic, &numeric));
    }
    let numeric_x = numeric_grad(x.as_slice().unwrap(), |v| {
        let (y, _) = model.clone().forward_train(&from_flat(x.dim(), v)).unwrap();
        combined(&y, &batch_triplets(n), lambda).unwrap().total
    });
    worst.max(rel_err(dx.as_slice().unwrap(), &numeric_x))
}
