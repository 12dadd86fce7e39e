//! Sign binarization, random-projection LSH, Hamming search and the PCA baseline.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::topk::TopK;
use crate::vecio::{write_file, VectorSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    /// Bits are the signs of the coordinates themselves.
    Identity,
    /// Gaussian random directions.
    Lsh,
    /// Leading principal directions of centered training data.
    Pca,
}

/// `m` projection directions in `R^d`, with an optional centering vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBasis {
    pub kind: BasisKind,
    pub m: usize,
    pub d: usize,
    /// Row-major `m × d`.
    pub rows: Vec<f64>,
    pub mean: Option<Vec<f64>>,
    /// Eigenvalues matching `rows`, for PCA bases.
    pub eigenvalues: Vec<f64>,
}

impl ProjectionBasis {
    pub fn identity(d: usize) -> Self {
        let mut rows = vec![0.0; d * d];
        for i in 0..d {
            rows[i * d + i] = 1.0;
        }
        ProjectionBasis { kind: BasisKind::Identity, m: d, d, rows, mean: None, eigenvalues: Vec::new() }
    }

    /// `m` directions with i.i.d. standard normal entries.
    pub fn lsh(d: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..m * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        ProjectionBasis { kind: BasisKind::Lsh, m, d, rows, mean: None, eigenvalues: Vec::new() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn project_into(&self, x: &[f32], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let dir = self.row(i);
            *o = match &self.mean {
                Some(mean) => dir.iter().zip(x).zip(mean).map(|((w, &v), mu)| w * (f64::from(v) - mu)).sum(),
                None => dir.iter().zip(x).map(|(w, &v)| w * f64::from(v)).sum(),
            };
        }
    }

    pub fn project(&self, x: &VectorSet) -> Result<VectorSet> {
        self.check_dim(x)?;
        let mut data = Vec::with_capacity(x.len() * self.m);
        let mut buf = vec![0.0; self.m];
        for row in x.rows() {
            self.project_into(row, &mut buf);
            data.extend(buf.iter().map(|&v| v as f32));
        }
        VectorSet::new(self.m, data)
    }

    fn check_dim(&self, x: &VectorSet) -> Result<()> {
        if !x.is_empty() && x.dim() != self.d {
            return Err(Error::arg(format!("vectors have dimension {}, basis expects {}", x.dim(), self.d)));
        }
        Ok(())
    }
}

/// Packed `m`-bit codes, each padded to whole 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodes {
    m: usize,
    words: usize,
    data: Vec<u64>,
}

impl BinaryCodes {
    pub fn new(m: usize) -> Self {
        BinaryCodes { m, words: m.div_ceil(64), data: Vec::new() }
    }

    pub fn bits(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.words).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    pub fn bit(&self, i: usize, b: usize) -> bool {
        (self.code(i)[b / 64] >> (b % 64)) & 1 == 1
    }

    pub fn push(&mut self, code: &[u64]) -> Result<()> {
        if code.len() != self.words {
            return Err(Error::arg(format!("code has {} words, expected {}", code.len(), self.words)));
        }
        self.data.extend_from_slice(code);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 8 * self.data.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for w in &self.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 18 {
            return Err(Error::format(bytes.len() as u64, "truncated binary code header"));
        }
        if &bytes[..6] != BINARY_MAGIC {
            return Err(Error::format(0, "not a binary code file (bad magic or version)"));
        }
        let m = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        let mut codes = BinaryCodes::new(m);
        let expected = (n as u128) * (codes.words as u128) * 8;
        if (bytes.len() - 18) as u128 != expected {
            return Err(Error::format(18, format!("expected {expected} payload bytes, found {}", bytes.len() - 18)));
        }
        codes.data = bytes[18..].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        let tail = m % 64;
        if tail != 0 {
            let mask = !0u64 << tail;
            if codes.data.chunks_exact(codes.words).any(|c| c[codes.words - 1] & mask != 0) {
                return Err(Error::format(18, "padding bits are not zero"));
            }
        }
        Ok(codes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        BinaryCodes::from_bytes(&fs::read(path)?)
    }
}

const BINARY_MAGIC: &[u8; 6] = b"SPBIN1";

/// Bit `i` is set iff `basis_i · x ≥ 0`.
pub fn binarize(x: &[f32], basis: &ProjectionBasis) -> Result<Vec<u64>> {
    if x.len() != basis.d {
        return Err(Error::arg(format!("vector has dimension {}, basis expects {}", x.len(), basis.d)));
    }
    let mut proj = vec![0.0; basis.m];
    basis.project_into(x, &mut proj);
    Ok(bits_from_signs(&proj))
}

fn bits_from_signs(proj: &[f64]) -> Vec<u64> {
    let mut code = vec![0u64; proj.len().div_ceil(64)];
    for (i, &v) in proj.iter().enumerate() {
        if v >= 0.0 {
            code[i / 64] |= 1 << (i % 64);
        }
    }
    code
}

pub fn binarize_all(x: &VectorSet, basis: &ProjectionBasis) -> Result<BinaryCodes> {
    basis.check_dim(x)?;
    let mut codes = BinaryCodes::new(basis.m);
    let mut proj = vec![0.0; basis.m];
    for row in x.rows() {
        basis.project_into(row, &mut proj);
        codes.push(&bits_from_signs(&proj))?;
    }
    Ok(codes)
}

#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Exact top-`k` base codes by Hamming distance for every query, ties by lower index.
pub fn hamming_search(queries: &BinaryCodes, base: &BinaryCodes, k: usize) -> Result<Vec<Vec<usize>>> {
    if queries.bits() != base.bits() {
        return Err(Error::arg(format!("query codes have {} bits, base codes {}", queries.bits(), base.bits())));
    }
    if k > base.len() {
        return Err(Error::arg(format!("k={k} exceeds base size {}", base.len())));
    }
    Ok((0..queries.len())
        .into_par_iter()
        .map(|q| {
            let query = queries.code(q);
            let mut top = TopK::new(k);
            for i in 0..base.len() {
                top.push(f64::from(hamming(query, base.code(i))), i);
            }
            top.into_sorted_ids()
        })
        .collect())
}

/// Eigenvalues (descending) of a symmetric row-major `n × n` matrix and the
/// matching eigenvectors as rows.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let eig = nalgebra::DMatrix::from_row_slice(n, n, matrix).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &col in &order {
        vectors.extend(eig.eigenvectors.column(col).iter().copied());
    }
    (values, vectors)
}

/// Principal directions of the centered training data, eigenvalue-descending.
pub fn pca_fit(train: &VectorSet, d_out: usize) -> Result<ProjectionBasis> {
    let (n, d) = (train.len(), train.dim());
    if d_out == 0 || d_out > d {
        return Err(Error::arg(format!("cannot keep {d_out} of {d} dimensions")));
    }
    if n <= d_out {
        return Err(Error::arg(format!("PCA to {d_out} dimensions needs more than {d_out} training vectors, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for row in train.rows() {
        mean.iter_mut().zip(row).for_each(|(m, &x)| *m += f64::from(x));
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in train.rows() {
        centered.iter_mut().zip(row).zip(&mean).for_each(|((c, &x), m)| *c = f64::from(x) - m);
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, d);
    let top = values.first().copied().unwrap_or(0.0);
    let rank = values.iter().filter(|&&v| v > top.abs() * 1e-10 && v > 0.0).count();
    if rank < d_out {
        return Err(Error::RankDeficient { requested: d_out, achievable: rank });
    }
    Ok(ProjectionBasis {
        kind: BasisKind::Pca,
        m: d_out,
        d,
        rows: vectors[..d_out * d].to_vec(),
        mean: Some(mean),
        eigenvalues: values[..d_out].to_vec(),
    })
}
