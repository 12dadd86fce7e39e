//! Exhaustive compressed-domain search and the evaluation statistics:
//! recall 1@k, uniformity overlap, epsilon-search curves and angular histograms.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::binarycodes::{hamming_search, BinaryCodes};
use crate::error::{Error, Result};
use crate::lattice::LatticeCodebook;
use crate::topk::TopK;
use crate::vecio::{squared_l2, GroundTruth, VectorSet};

/// Decodes every code once into a row-major `n × d` integer matrix.
pub fn decode_all(codes: &[u128], codebook: &LatticeCodebook) -> Result<Vec<i32>> {
    let d = codebook.dim();
    let mut points = vec![0i32; codes.len() * d];
    points.par_chunks_mut(d).zip(codes.par_iter()).try_for_each(|(z, &c)| codebook.decode_into(c, z))?;
    Ok(points)
}

/// Top-`k` lattice codes per query under the asymmetric distance `2 - 2 q·z / r`.
pub fn scan_lattice(
    queries: &VectorSet,
    codes: &[u128],
    codebook: &LatticeCodebook,
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if k > codes.len() {
        return Err(Error::arg(format!("k={k} exceeds database size {}", codes.len())));
    }
    let d = codebook.dim();
    if !queries.is_empty() && queries.dim() != d {
        return Err(Error::arg(format!("queries have dimension {}, lattice has {d}", queries.dim())));
    }
    let points = decode_all(codes, codebook)?;
    Ok((0..queries.len())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let mut top = TopK::new(k);
            for (i, z) in points.chunks_exact(d).enumerate() {
                top.push(codebook.asymmetric_distance_to_point(query, z), i);
            }
            top.into_sorted_ids()
        })
        .collect())
}

/// Top-`k` binary codes per query code by Hamming distance.
pub fn scan_binary(queries: &BinaryCodes, base: &BinaryCodes, k: usize) -> Result<Vec<Vec<usize>>> {
    hamming_search(queries, base, k)
}

/// Fraction of queries whose true nearest neighbor is among their first `k` results.
pub fn recall_at_k(results: &[Vec<usize>], gt: &GroundTruth, k: usize) -> f64 {
    let n = results.len().min(gt.num_queries());
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n).filter(|&q| results[q].iter().take(k).any(|&id| id == gt.nearest(q))).count();
    hits as f64 / n as f64
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    /// `(k, recall 1@k)`
    pub recall: Vec<(usize, f64)>,
    pub d_out: usize,
    pub lambda: Option<f64>,
    /// Codec description, e.g. `lattice r2=79` or `binary m=64`.
    pub codec: String,
    pub bits_per_vector: u32,
    #[serde(skip)]
    pub encode_seconds: Option<f64>,
    #[serde(skip)]
    pub scan_seconds: Option<f64>,
}

impl EvalReport {
    pub fn recall_for(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|&(_, r)| r)
    }

    /// `metric<TAB>k-or-ε<TAB>value` rows. Timings are left out so reports of
    /// identical runs compare equal byte for byte.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tk_or_eps\tvalue\n");
        for (k, r) in &self.recall {
            writeln!(out, "recall1@\t{k}\t{r:.6}").unwrap();
        }
        writeln!(out, "bits_per_vector\t-\t{}", self.bits_per_vector).unwrap();
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UniformityStats {
    /// Estimated `P[d(x, NN_1(x)) > d(y, NN_k(y))]`.
    pub probability: f64,
    pub pairs: usize,
    pub k_far: usize,
    pub nn1: Vec<f64>,
    pub nn_far: Vec<f64>,
}

/// Distances from each point to its 1st and `k_far`-th nearest reference
/// point. With `exclude_self`, point `i` skips reference `i`.
pub fn neighbor_distances(
    points: &VectorSet,
    reference: &VectorSet,
    k_far: usize,
    exclude_self: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let available = reference.len() - usize::from(exclude_self).min(reference.len());
    if k_far == 0 || k_far > available {
        return Err(Error::arg(format!("need more than {k_far} reference points, have {}", reference.len())));
    }
    let rows: Vec<(f64, f64)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut top = TopK::new(k_far);
            for (j, r) in reference.rows().enumerate() {
                if !(exclude_self && i == j) {
                    top.push(squared_l2(p, r), j);
                }
            }
            let sorted = top.into_sorted();
            (sorted[0].0.sqrt(), sorted[k_far - 1].0.sqrt())
        })
        .collect();
    Ok(rows.into_iter().unzip())
}

fn overlap_from_distances(
    nn1: Vec<f64>,
    nn_far: Vec<f64>,
    k_far: usize,
    pairs: usize,
    seed: u64,
) -> Result<UniformityStats> {
    let n = nn1.len();
    if n < 2 {
        return Err(Error::arg("need at least two points to sample pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut above = 0usize;
    for _ in 0..pairs {
        let x = rng.random_range(0..n);
        let mut y = rng.random_range(0..n - 1);
        if y >= x {
            y += 1;
        }
        if nn1[x] > nn_far[y] {
            above += 1;
        }
    }
    let probability = if pairs == 0 { 0.0 } else { above as f64 / pairs as f64 };
    Ok(UniformityStats { probability, pairs, k_far, nn1, nn_far })
}

/// Overlap statistic within one set: each point's neighbors are the other points.
pub fn uniformity_overlap(features: &VectorSet, k_far: usize, pairs: usize, seed: u64) -> Result<UniformityStats> {
    if features.len() <= k_far {
        return Err(Error::arg(format!("need more than k_far={k_far} points, have {}", features.len())));
    }
    let (nn1, nn_far) = neighbor_distances(features, features, k_far, true)?;
    overlap_from_distances(nn1, nn_far, k_far, pairs, seed)
}

/// Overlap statistic for queries against a separate database.
pub fn uniformity_overlap_queries(
    queries: &VectorSet,
    base: &VectorSet,
    k_far: usize,
    pairs: usize,
    seed: u64,
) -> Result<UniformityStats> {
    let (nn1, nn_far) = neighbor_distances(queries, base, k_far, false)?;
    overlap_from_distances(nn1, nn_far, k_far, pairs, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonPoint {
    pub epsilon: f64,
    /// Mean number of base vectors within `epsilon` of a query.
    pub mean_count: f64,
    /// Fraction of queries whose true nearest neighbor lies within `epsilon`.
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonCurve {
    pub points: Vec<EpsilonPoint>,
}

/// Per query: sorted distances to all base vectors, and the distance to its true NN.
fn sorted_query_distances(queries: &VectorSet, base: &VectorSet, gt: &GroundTruth) -> Result<Vec<(Vec<f64>, f64)>> {
    if gt.num_queries() != queries.len() {
        return Err(Error::arg(format!("ground truth covers {} queries, got {}", gt.num_queries(), queries.len())));
    }
    if !queries.is_empty() && queries.dim() != base.dim() {
        return Err(Error::arg("queries and base have different dimensions"));
    }
    (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let nn = gt.nearest(q);
            if nn >= base.len() {
                return Err(Error::arg(format!("ground truth id {nn} out of range")));
            }
            let mut dists: Vec<f64> = base.rows().map(|r| squared_l2(query, r).sqrt()).collect();
            let nn_dist = dists[nn];
            dists.sort_by(f64::total_cmp);
            Ok((dists, nn_dist))
        })
        .collect()
}

/// Range-search agreement with nearest-neighbor search at each threshold.
/// Distances are measured in the space of `queries`/`base`; `gt` refers to the
/// original space.
pub fn epsilon_curve(
    queries: &VectorSet,
    base: &VectorSet,
    gt: &GroundTruth,
    thresholds: &[f64],
) -> Result<EpsilonCurve> {
    if thresholds.iter().any(|&e| !(e > 0.0)) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("thresholds must be positive and strictly ascending"));
    }
    let per_query = sorted_query_distances(queries, base, gt)?;
    let nq = per_query.len().max(1) as f64;
    let points = thresholds
        .iter()
        .map(|&eps| {
            let count: usize = per_query.iter().map(|(d, _)| d.partition_point(|&v| v <= eps)).sum();
            let hits = per_query.iter().filter(|(_, nn)| *nn <= eps).count();
            EpsilonPoint { epsilon: eps, mean_count: count as f64 / nq, recall: hits as f64 / nq }
        })
        .collect();
    Ok(EpsilonCurve { points })
}

/// The smallest ε reaching `target` recall of the true NN, and the mean number
/// of results returned at that ε.
pub fn results_at_recall(queries: &VectorSet, base: &VectorSet, gt: &GroundTruth, target: f64) -> Result<EpsilonPoint> {
    if !(0.0..=1.0).contains(&target) || queries.is_empty() {
        return Err(Error::arg("target recall must be in [0, 1] with at least one query"));
    }
    let per_query = sorted_query_distances(queries, base, gt)?;
    let mut nn: Vec<f64> = per_query.iter().map(|(_, d)| *d).collect();
    nn.sort_by(f64::total_cmp);
    let needed = ((target * nn.len() as f64).ceil() as usize).clamp(1, nn.len());
    let eps = nn[needed - 1];
    let nq = per_query.len() as f64;
    let count: usize = per_query.iter().map(|(d, _)| d.partition_point(|&v| v <= eps)).sum();
    let hits = per_query.iter().filter(|(_, d)| *d <= eps).count();
    Ok(EpsilonPoint { epsilon: eps, mean_count: count as f64 / nq, recall: hits as f64 / nq })
}

/// Angle counts of the features projected on random 2D planes.
/// Row `p` holds `n_bins` counts over `[-π, π)` for plane `p`.
pub fn angular_histogram(features: &VectorSet, n_planes: usize, n_bins: usize, seed: u64) -> Result<Vec<Vec<u64>>> {
    if n_bins < 4 {
        return Err(Error::arg(format!("need at least 4 bins, got {n_bins}")));
    }
    let d = features.dim();
    if d < 2 {
        return Err(Error::arg("angular histograms need at least 2 dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_planes);
    for _ in 0..n_planes {
        let (u, v) = random_plane(d, &mut rng);
        let mut counts = vec![0u64; n_bins];
        for row in features.rows() {
            let a: f64 = row.iter().zip(&u).map(|(&x, w)| f64::from(x) * w).sum();
            let b: f64 = row.iter().zip(&v).map(|(&x, w)| f64::from(x) * w).sum();
            let theta = b.atan2(a);
            let t = (theta + std::f64::consts::PI) / std::f64::consts::TAU;
            let bin = ((t * n_bins as f64) as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
        out.push(counts);
    }
    Ok(out)
}

/// Orthonormalized pair of Gaussian vectors.
fn random_plane(d: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu < 1e-12 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= nu);
        let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&u).for_each(|(x, a)| *x -= proj * a);
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv < 1e-12 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        return (u, v);
    }
}

/// Equal-width histogram of `values` over `[lo, hi]`.
pub fn histogram(values: &[f64], n_bins: usize, lo: f64, hi: f64) -> Vec<u64> {
    let mut counts = vec![0u64; n_bins];
    if n_bins == 0 || !(hi > lo) {
        return counts;
    }
    for &v in values {
        let t = ((v - lo) / (hi - lo) * n_bins as f64).floor();
        let bin = (t.max(0.0) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    counts
}
