//! Training objectives with analytic gradients.
//!
//! * KoLeo: `-(1/n) Σ log ρ_i` where `ρ_i` is the distance from row `i` to its
//!   nearest other row. Minimizing it spreads points apart.
//! * Rank: margin-free triplet hinge `max(0, |a-p| - |a-n|)`, averaged over triplets.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower clamp on nearest-neighbor distances, keeps `log ρ` finite on duplicates.
pub const RHO_MIN: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct KoLeoValue {
    pub loss: f64,
    pub grad: Array2<f64>,
    /// Index of each row's nearest other row (lowest index on ties).
    pub neighbors: Vec<usize>,
    /// Clamped nearest-neighbor distances.
    pub rho: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// KoLeo entropy regularizer over the rows of `y`.
pub fn koleo(y: ArrayView2<f64>) -> Result<KoLeoValue> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::arg(format!("KoLeo needs at least 2 rows, got {n}")));
    }
    let mut neighbors = vec![0usize; n];
    let mut best = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in i + 1..n {
            let d2 = sq_dist(y.row(i), y.row(j));
            if d2 < best[i] {
                best[i] = d2;
                neighbors[i] = j;
            }
            // j > i, so a strict comparison keeps the lower index for row j.
            if d2 < best[j] {
                best[j] = d2;
                neighbors[j] = i;
            }
        }
    }
    let mut grad = Array2::zeros(y.raw_dim());
    let mut rho = Vec::with_capacity(n);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let raw = best[i].sqrt();
        let r = raw.max(RHO_MIN);
        rho.push(r);
        loss -= r.ln() * inv_n;
        if raw < RHO_MIN {
            continue; // clamped: locally constant
        }
        let j = neighbors[i];
        let scale = inv_n / (raw * raw);
        for k in 0..y.ncols() {
            let diff = y[[i, k]] - y[[j, k]];
            grad[[i, k]] -= scale * diff;
            grad[[j, k]] += scale * diff;
        }
    }
    Ok(KoLeoValue { loss, grad, neighbors, rho })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletValue {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(0, |a-p| - |a-n|)`. The gradient is zero wherever the hinge is not strictly active.
pub fn triplet(anchor: &[f64], positive: &[f64], negative: &[f64]) -> Result<TripletValue> {
    let d = anchor.len();
    if positive.len() != d || negative.len() != d {
        return Err(Error::arg("triplet vectors must have equal dimension"));
    }
    let dp: Vec<f64> = anchor.iter().zip(positive).map(|(a, p)| a - p).collect();
    let dn: Vec<f64> = anchor.iter().zip(negative).map(|(a, n)| a - n).collect();
    let norm_p = dp.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_n = dn.iter().map(|v| v * v).sum::<f64>().sqrt();
    let margin = norm_p - norm_n;
    let mut out = TripletValue {
        loss: margin.max(0.0),
        grad_anchor: vec![0.0; d],
        grad_positive: vec![0.0; d],
        grad_negative: vec![0.0; d],
    };
    if margin > 0.0 {
        for k in 0..d {
            // norm_p > norm_n >= 0 here, so only the negative side can be degenerate.
            let up = dp[k] / norm_p;
            let un = if norm_n > 0.0 { dn[k] / norm_n } else { 0.0 };
            out.grad_anchor[k] = up - un;
            out.grad_positive[k] = -up;
            out.grad_negative[k] = un;
        }
    }
    Ok(out)
}

/// Row indices of one triplet within a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug)]
pub struct CombinedLoss {
    /// `rank + λ·koleo`
    pub total: f64,
    /// Mean triplet loss.
    pub rank: f64,
    pub koleo: f64,
    pub grad: Array2<f64>,
}

/// Mean triplet loss over `triplets` plus `λ` times KoLeo over all rows of `batch`.
pub fn combined(batch: &Array2<f64>, triplets: &[Triplet], lambda: f64) -> Result<CombinedLoss> {
    combined_split(batch, batch, triplets, 0..batch.nrows(), lambda)
}

/// General form: the rank term reads `rank_input`, KoLeo reads rows
/// `koleo_rows` of `koleo_input`. Both inputs share one gradient, so they must
/// have the same shape. With a straight-through quantizer `rank_input` holds
/// the quantized rows and `koleo_input` the continuous ones.
pub fn combined_split(
    koleo_input: &Array2<f64>,
    rank_input: &Array2<f64>,
    triplets: &[Triplet],
    koleo_rows: Range<usize>,
    lambda: f64,
) -> Result<CombinedLoss> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!("λ must be a non-negative number, got {lambda}")));
    }
    if koleo_input.dim() != rank_input.dim() {
        return Err(Error::arg("KoLeo and rank inputs must have the same shape"));
    }
    if koleo_rows.end > koleo_input.nrows() {
        return Err(Error::arg("KoLeo row range out of bounds"));
    }
    let n = rank_input.nrows();
    let mut grad = Array2::zeros(rank_input.raw_dim());
    let mut rank = 0.0;
    if !triplets.is_empty() {
        let inv = 1.0 / triplets.len() as f64;
        for t in triplets {
            if t.anchor >= n || t.positive >= n || t.negative >= n {
                return Err(Error::arg(format!("triplet {t:?} indexes past {n} rows")));
            }
            let row = |i: usize| rank_input.row(i).to_vec();
            let v = triplet(&row(t.anchor), &row(t.positive), &row(t.negative))?;
            rank += v.loss * inv;
            if v.loss > 0.0 {
                for (i, g) in
                    [(t.anchor, &v.grad_anchor), (t.positive, &v.grad_positive), (t.negative, &v.grad_negative)]
                {
                    grad.row_mut(i).iter_mut().zip(g).for_each(|(o, &x)| *o += x * inv);
                }
            }
        }
    }
    let k = koleo(koleo_input.slice(ndarray::s![koleo_rows.clone(), ..]))?;
    if lambda > 0.0 {
        let mut block = grad.slice_mut(ndarray::s![koleo_rows, ..]);
        block.scaled_add(lambda, &k.grad);
    }
    Ok(CombinedLoss { total: rank + lambda * k.loss, rank, koleo: k.loss, grad })
}
