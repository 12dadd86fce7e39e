//! Catalyzer training: triplet mining, the epoch loop, and optional
//! end-to-end training through a straight-through lattice quantizer.

use std::fmt;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::LatticeCodebook;
use crate::losses::{combined_split, Triplet};
use crate::nn::{lr_schedule, to_array, CatalyzerModel, Sgd, DEFAULT_HIDDEN};
use crate::topk::TopK;
use crate::vecio::{squared_l2, VectorSet};

/// Regularization strength by output dimension, tuned for 1M-scale datasets.
pub const LAMBDA_BY_DOUT: [(usize, f64); 4] = [(16, 0.05), (24, 0.02), (32, 0.01), (40, 0.005)];

/// λ of the closest tabulated output dimension (the smaller one on ties).
pub fn default_lambda(d_out: usize) -> f64 {
    LAMBDA_BY_DOUT.iter().min_by_key(|(d, _)| d.abs_diff(d_out)).map(|&(_, l)| l).expect("table is not empty")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub k_pos: usize,
    pub k_neg: usize,
    pub d_out: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Squared lattice radius for end-to-end training, `None` for plain training.
    pub end_to_end_r2: Option<u32>,
}

impl TrainConfig {
    pub fn new(d_out: usize) -> Self {
        TrainConfig {
            lambda: default_lambda(d_out),
            k_pos: 10,
            k_neg: 50,
            d_out,
            d_hidden: DEFAULT_HIDDEN,
            epochs: 300,
            batch_size: 1024,
            momentum: 0.9,
            seed: 0,
            end_to_end_r2: None,
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg(format!("λ must be non-negative, got {}", self.lambda)));
        }
        if self.k_pos == 0 || self.k_neg == 0 {
            return Err(Error::arg("k_pos and k_neg must be at least 1"));
        }
        if self.epochs == 0 || self.batch_size < 2 || self.d_out == 0 || self.d_hidden == 0 {
            return Err(Error::arg("epochs, d_out and d_hidden must be positive and batch size at least 2"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.k_pos >= n_train || self.k_neg >= n_train {
            return Err(Error::arg(format!(
                "k_pos={} and k_neg={} must be smaller than the training set ({n_train})",
                self.k_pos, self.k_neg
            )));
        }
        Ok(())
    }
}

/// Input-space neighbors of every training point, self excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Positives {
    pub k: usize,
    pub ids: Vec<usize>,
}

impl Positives {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.k..(i + 1) * self.k]
    }
}

/// The `k` nearest other rows of every row, excluding itself by index.
fn knn_excluding_self(x: &VectorSet, k: usize) -> Vec<Vec<usize>> {
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let me = x.row(i);
            let mut top = TopK::new(k);
            for (j, other) in x.rows().enumerate() {
                if j != i {
                    top.push(squared_l2(me, other), j);
                }
            }
            top.into_sorted_ids()
        })
        .collect()
}

pub fn mine_positives(train: &VectorSet, k_pos: usize) -> Result<Positives> {
    if k_pos == 0 || k_pos >= train.len() {
        return Err(Error::arg(format!("k_pos={k_pos} must be in 1..{}", train.len())));
    }
    let ids = knn_excluding_self(train, k_pos).concat();
    Ok(Positives { k: k_pos, ids })
}

/// For every point, the index of its `k_neg`-th nearest neighbor in output space.
pub fn mine_negatives(model: &CatalyzerModel, train: &VectorSet, k_neg: usize) -> Result<Vec<usize>> {
    if k_neg == 0 || k_neg >= train.len() {
        return Err(Error::arg(format!("k_neg={k_neg} must be in 1..{}", train.len())));
    }
    let out = model.transform(train)?;
    Ok(knn_excluding_self(&out, k_neg).into_iter().map(|row| row[k_neg - 1]).collect())
}

/// Identity-gradient quantization layer: the forward pass snaps each row to
/// the nearest lattice point scaled back onto the unit sphere.
#[derive(Clone, Debug)]
pub struct StraightThrough {
    codebook: LatticeCodebook,
}

impl StraightThrough {
    pub fn new(codebook: LatticeCodebook) -> Self {
        StraightThrough { codebook }
    }

    pub fn forward(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        if y.ncols() != self.codebook.dim() {
            return Err(Error::arg(format!(
                "rows have {} columns, lattice has dimension {}",
                y.ncols(),
                self.codebook.dim()
            )));
        }
        let mut out = Array2::zeros(y.raw_dim());
        for (src, mut dst) in y.rows().into_iter().zip(out.rows_mut()) {
            let row = src.to_vec();
            let q = self.codebook.quantize(&row)?;
            dst.iter_mut().zip(q).for_each(|(d, v)| *d = v);
        }
        Ok(out)
    }

    pub fn backward(&self, grad: &Array2<f64>) -> Array2<f64> {
        grad.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub rank_loss: f64,
    pub koleo: f64,
    pub total: f64,
}

impl EpochStats {
    pub const TSV_HEADER: &'static str = "epoch\tlr\trank_loss\tkoleo\ttotal";
}

impl fmt::Display for EpochStats {
    /// One TSV row matching [`EpochStats::TSV_HEADER`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.9}\t{:.9}\t{:.9}", self.epoch, self.lr, self.rank_loss, self.koleo, self.total)
    }
}

/// Splits shuffled indices into batches, folding a trailing singleton into the
/// previous batch since KoLeo needs two rows.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// One shuffled pass over the training set with frozen negatives.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut CatalyzerModel,
    optimizer: &mut Sgd,
    train: &Array2<f64>,
    config: &TrainConfig,
    positives: &Positives,
    negatives: &[usize],
    quantizer: Option<&StraightThrough>,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<EpochStats> {
    let n = train.nrows();
    if negatives.len() != n || positives.ids.len() != n * positives.k {
        return Err(Error::arg("mining tables do not match the training set"));
    }
    optimizer.lr = lr_schedule(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let (mut rank_sum, mut koleo_sum, mut total_sum) = (0.0, 0.0, 0.0);
    for batch in batches(&order, config.batch_size) {
        let b = batch.len();
        let mut rows = Vec::with_capacity(3 * b);
        rows.extend_from_slice(batch);
        rows.extend(batch.iter().map(|&i| positives.row(i)[rng.random_range(0..positives.k)]));
        rows.extend(batch.iter().map(|&i| negatives[i]));
        let x = train.select(ndarray::Axis(0), &rows);
        let (y, cache) = model.forward_train(&x)?;
        let triplets: Vec<Triplet> =
            (0..b).map(|i| Triplet { anchor: i, positive: b + i, negative: 2 * b + i }).collect();
        let loss = match quantizer {
            Some(q) => combined_split(&y, &q.forward(&y)?, &triplets, 0..b, config.lambda)?,
            None => combined_split(&y, &y, &triplets, 0..b, config.lambda)?,
        };
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {epoch}: rank {} koleo {}",
                loss.rank, loss.koleo
            )));
        }
        let grad = match quantizer {
            Some(q) => q.backward(&loss.grad),
            None => loss.grad,
        };
        let (grads, _) = model.backward(&cache, &grad)?;
        optimizer.step(model, &grads)?;
        let w = b as f64 / n as f64;
        rank_sum += w * loss.rank;
        koleo_sum += w * loss.koleo;
        total_sum += w * loss.total;
    }
    Ok(EpochStats { epoch, lr: optimizer.lr, rank_loss: rank_sum, koleo: koleo_sum, total: total_sum })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub positive_minings: usize,
    pub negative_minings: usize,
}

/// Full training run. `on_epoch` sees the statistics of every finished epoch.
pub fn train(
    train_set: &VectorSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(CatalyzerModel, TrainReport)> {
    config.validate(train_set.len())?;
    let mut model = CatalyzerModel::new(train_set.dim(), config.d_hidden, config.d_out, config.seed)?;
    let quantizer =
        config.end_to_end_r2.map(|r2| LatticeCodebook::new(config.d_out, r2).map(StraightThrough::new)).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = Sgd::new(&model, lr_schedule(0), config.momentum);
    let x = to_array(train_set);

    let positives = mine_positives(train_set, config.k_pos)?;
    let mut report =
        TrainReport { epochs: Vec::with_capacity(config.epochs), positive_minings: 1, negative_minings: 0 };
    for epoch in 0..config.epochs {
        let negatives = mine_negatives(&model, train_set, config.k_neg)?;
        report.negative_minings += 1;
        let stats = train_epoch(
            &mut model,
            &mut optimizer,
            &x,
            config,
            &positives,
            &negatives,
            quantizer.as_ref(),
            epoch,
            &mut rng,
        )?;
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok((model, report))
}

/// Loss statistics of `model` on `train_set` without updating anything:
/// mean triplet loss over freshly mined triplets and KoLeo over batches.
pub fn evaluate_objective(model: &CatalyzerModel, train_set: &VectorSet, config: &TrainConfig) -> Result<(f64, f64)> {
    let positives = mine_positives(train_set, config.k_pos)?;
    let negatives = mine_negatives(model, train_set, config.k_neg)?;
    let y = to_array(&model.transform(train_set)?);
    let n = y.nrows();
    let mut rank = 0.0;
    for (i, &neg) in negatives.iter().enumerate() {
        // Average over all positives, so the estimate does not depend on sampling.
        for &p in positives.row(i) {
            let a = y.row(i).to_vec();
            let v = crate::losses::triplet(&a, &y.row(p).to_vec(), &y.row(neg).to_vec())?;
            rank += v.loss / (n * positives.k) as f64;
        }
    }
    let mut koleo = 0.0;
    let chunks: Vec<usize> = (0..n).step_by(config.batch_size).collect();
    for &start in &chunks {
        let end = (start + config.batch_size).min(n);
        if end - start < 2 {
            continue;
        }
        let k = crate::losses::koleo(y.slice(s![start..end, ..]))?;
        koleo += k.loss * (end - start) as f64 / n as f64;
    }
    Ok((rank, koleo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f32]) -> VectorSet {
        VectorSet::new(1, points.to_vec()).unwrap()
    }

    #[test]
    fn positives_on_a_line() {
        let p = mine_positives(&line(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(p.ids, vec![1, 0, 1]);
        let p = mine_positives(&line(&[0.0, 1.0, 3.0]), 2).unwrap();
        assert_eq!(p.ids, vec![1, 2, 0, 2, 1, 0]);
        assert!(mine_positives(&line(&[0.0, 1.0, 3.0]), 3).is_err());
    }

    #[test]
    fn duplicate_is_nearest_positive() {
        let p = mine_positives(&line(&[5.0, 0.0, 5.0]), 1).unwrap();
        assert_eq!(p.ids, vec![2, 0, 0]);
    }

    #[test]
    fn negatives_on_monotone_map() {
        // Hidden activations are x + 1; the output angle is then close to 0.01 (x + 1).
        let mut model = CatalyzerModel::new(1, 1, 2, 0).unwrap();
        model.fc1.weight[[0, 0]] = 1.0;
        model.fc2.weight[[0, 0]] = 1.0;
        model.bn1.running_mean[0] = -1.0;
        model.fc3.weight.assign(&ndarray::array![[0.0], [0.01]]);
        model.fc3.bias.assign(&ndarray::array![1.0, 0.0]);
        let train = line(&[0.0, 1.0, 3.0]);
        let out = model.transform(&train).unwrap();
        let angle = |i: usize| f64::from(out.row(i)[1]).atan2(f64::from(out.row(i)[0]));
        assert!(angle(0) < angle(1) && angle(1) < angle(2));
        assert_eq!(mine_negatives(&model, &train, 1).unwrap(), vec![1, 0, 1]);
        assert_eq!(mine_negatives(&model, &train, 2).unwrap(), vec![2, 2, 0]);
    }

    #[test]
    fn batches_fold_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![3, 3, 3]);
    }

    #[test]
    fn default_lambda_table() {
        assert_eq!(default_lambda(16), 0.05);
        assert_eq!(default_lambda(24), 0.02);
        assert_eq!(default_lambda(40), 0.005);
        assert_eq!(default_lambda(8), 0.05);
        assert_eq!(default_lambda(20), 0.05);
        assert_eq!(default_lambda(64), 0.005);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let cb = LatticeCodebook::new(8, 10).unwrap();
        let st = StraightThrough::new(cb);
        let r = 10f64.sqrt();
        let y = Array2::from_shape_vec((1, 8), vec![3.0 / r, 1.0 / r, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let q = st.forward(&y).unwrap();
        assert!((&q - &y).iter().all(|v| v.abs() < 1e-12));
        let g = Array2::from_shape_fn((3, 8), |(i, j)| (i * 8 + j) as f64 - 7.5);
        assert_eq!(st.backward(&g), g);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(8);
        c.k_neg = 5;
        c.k_pos = 2;
        assert!(c.validate(10).is_ok());
        c.lambda = -1.0;
        assert!(c.validate(10).is_err());
        c.lambda = 0.0;
        c.k_neg = 10;
        assert!(c.validate(10).is_err());
    }
}
