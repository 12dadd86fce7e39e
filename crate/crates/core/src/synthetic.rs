//! Seeded Gaussian-mixture datasets for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::vecio::{l2_normalize, VectorSet};

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: usize,
    /// Typical standard deviation of a component along its principal axes,
    /// relative to the unit-variance centers. Each component draws its own
    /// scale in `[spread / 4, 2 spread]`, so densities differ between clusters.
    pub spread: f64,
    /// Rank of each component's covariance; `0` means full rank.
    pub intrinsic_dim: usize,
    /// Isotropic noise added on top of the low-rank part.
    pub noise: f64,
    /// Project every vector onto the unit sphere.
    pub normalize: bool,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec { dim: 32, components: 50, spread: 0.5, intrinsic_dim: 0, noise: 0.0, normalize: true }
    }
}

impl MixtureSpec {
    /// 32-dimensional, 20 clusters with rank-6 covariances plus light noise.
    /// Locally low-dimensional data, which is where a learned spreading
    /// transform has something to gain over a linear projection.
    pub fn desk() -> Self {
        MixtureSpec { dim: 32, components: 20, spread: 0.5, intrinsic_dim: 6, noise: 0.05, normalize: true }
    }
}

/// Train, base and query sets drawn from one mixture.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: VectorSet,
    pub base: VectorSet,
    pub queries: VectorSet,
}

pub struct Mixture {
    spec: MixtureSpec,
    centers: Vec<Vec<f64>>,
    /// Per-component `dim × rank` mixing matrices, row-major.
    factors: Vec<Vec<f64>>,
    rank: usize,
}

impl Mixture {
    pub fn new(spec: MixtureSpec, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.components == 0 || !(spec.spread > 0.0) {
            return Err(Error::arg("mixture needs positive dimension, components and spread"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers =
            (0..spec.components).map(|_| (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let rank = if spec.intrinsic_dim == 0 { spec.dim } else { spec.intrinsic_dim.min(spec.dim) };
        let factors = (0..spec.components)
            .map(|_| {
                // Per-coordinate standard deviation is about `scale * sqrt(rank)`.
                let scale = spec.spread * rng.random_range(0.25..2.0) / (rank as f64).sqrt();
                (0..spec.dim * rank).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        Ok(Mixture { spec, centers, factors, rank })
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<VectorSet> {
        let noise = Normal::new(0.0, self.spec.noise).map_err(|e| Error::arg(e.to_string()))?;
        let mut data = Vec::with_capacity(n * self.spec.dim);
        let mut latent = vec![0.0; self.rank];
        for _ in 0..n {
            let c = rng.random_range(0..self.spec.components);
            latent.iter_mut().for_each(|g| *g = StandardNormal.sample(rng));
            for (i, mu) in self.centers[c].iter().enumerate() {
                let row = &self.factors[c][i * self.rank..(i + 1) * self.rank];
                let v = mu + row.iter().zip(&latent).map(|(a, g)| a * g).sum::<f64>() + noise.sample(rng);
                data.push(v as f32);
            }
        }
        let v = VectorSet::new(self.spec.dim, data)?;
        if self.spec.normalize {
            l2_normalize(&v)
        } else {
            Ok(v)
        }
    }
}

/// Draws disjoint train/base/query sets from one seeded mixture.
pub fn benchmark(spec: MixtureSpec, n_train: usize, n_base: usize, n_queries: usize, seed: u64) -> Result<Benchmark> {
    let mixture = Mixture::new(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    Ok(Benchmark {
        train: mixture.sample(n_train, &mut rng)?,
        base: mixture.sample(n_base, &mut rng)?,
        queries: mixture.sample(n_queries, &mut rng)?,
    })
}
