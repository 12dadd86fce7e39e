#![allow(dead_code)]

pub mod fd;

use ndarray::Array2;
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spcat::vecio::VectorSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every `z ∈ Z^d` with `Σ z_i² = r2`, by exhaustive search over coordinates.
pub fn enumerate_sphere(d: usize, r2: u32) -> Vec<Vec<i32>> {
    fn go(prefix: &mut Vec<i32>, d: usize, remaining: i64, out: &mut Vec<Vec<i32>>) {
        if prefix.len() == d {
            if remaining == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        let m = (remaining as f64).sqrt() as i32 + 1;
        for v in -m..=m {
            let sq = i64::from(v) * i64::from(v);
            if sq <= remaining {
                prefix.push(v);
                go(prefix, d, remaining - sq, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(d), d, i64::from(r2), &mut out);
    out
}

/// Number of ordered, signed representations of `r2` as a sum of `d` squares,
/// by dynamic programming over coordinates.
pub fn dp_count(d: usize, r2: u32) -> BigUint {
    let n = r2 as usize;
    let mut ways = vec![BigUint::from(0u32); n + 1];
    ways[0] = BigUint::from(1u32);
    for _ in 0..d {
        let mut next = vec![BigUint::from(0u32); n + 1];
        for (s, w) in ways.iter().enumerate() {
            if *w == BigUint::from(0u32) {
                continue;
            }
            let mut v = 0usize;
            while s + v * v <= n {
                let mult = if v == 0 { 1u32 } else { 2 };
                next[s + v * v] += w * BigUint::from(mult);
                v += 1;
            }
        }
        ways = next;
    }
    ways.swap_remove(n)
}

/// Canonical atom of a point: absolute values sorted in decreasing order.
pub fn atom_of(z: &[i32]) -> Vec<u32> {
    let mut a: Vec<u32> = z.iter().map(|v| v.unsigned_abs()).collect();
    a.sort_unstable_by(|x, y| y.cmp(x));
    a
}

pub fn dot_i(y: &[f64], z: &[i32]) -> f64 {
    y.iter().zip(z).map(|(a, &b)| a * f64::from(b)).sum()
}

pub fn random_unit(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_matrix(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

pub fn random_set(n: usize, d: usize, rng: &mut impl Rng) -> VectorSet {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
    VectorSet::new(d, data).unwrap()
}

pub fn random_unit_set(n: usize, d: usize, rng: &mut impl Rng) -> VectorSet {
    let data = (0..n).flat_map(|_| random_unit(d, rng)).map(|v| v as f32).collect();
    VectorSet::new(d, data).unwrap()
}

/// `|a - b| / (|a| + |b|)` over whole tensors. The denominator is floored at
/// 1e-6 so gradients that vanish identically (biases feeding batch-norm)
/// compare as equal instead of as two round-off vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-6)
}

pub const FD_STEP: f64 = 1e-3;

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let up = f(&p);
            p[i] = x[i] - FD_STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Random `d×d` orthogonal matrix: Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn rotate(x: &Array2<f64>, q: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |(i, j)| q[j].iter().zip(x.row(i)).map(|(a, b)| a * b).sum())
}
