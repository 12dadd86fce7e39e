//! Spherical lattice quantizer: the integer points of `Z^d` with squared norm `r²`.
//!
//! Every point of the sphere is a signed permutation of an *atom*, a
//! non-increasing sequence of non-negative integers. A code is laid out as
//!
//! ```text
//! code = atom_offset + perm_rank * 2^s + sign_bits
//! ```
//!
//! where `s` is the number of non-zero entries of the atom, `perm_rank` is the
//! lexicographic rank of the arrangement among the distinct permutations of the
//! atom (larger values first, rank 0 is the atom itself) and `sign_bits` holds
//! one bit per non-zero entry in arrangement order, most significant first,
//! with 1 meaning negative. Atoms are ordered lexicographically decreasing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vecio::{write_file, VectorSet};

/// Largest supported code width. Rank arithmetic multiplies permutation counts
/// by a multiplicity of at most `d`, which must stay inside `u128`.
pub const MAX_CODE_BITS: u32 = 120;

/// A canonical representative of a point orbit under permutations and sign flips.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    values: Vec<u32>,
    /// Distinct values in decreasing order, with their multiplicities.
    distinct: Vec<(u32, u32)>,
    nonzero: u32,
    arrangements: u128,
}

impl Atom {
    /// `values` must be non-increasing.
    pub fn new(values: Vec<u32>) -> Result<Self> {
        let mut distinct: Vec<(u32, u32)> = Vec::new();
        for &v in &values {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                Some((last, _)) if *last < v => return Err(Error::arg("atom must be non-increasing")),
                _ => distinct.push((v, 1)),
            }
        }
        let nonzero = values.iter().filter(|&&v| v != 0).count() as u32;
        let counts: Vec<u32> = distinct.iter().map(|&(_, c)| c).collect();
        let arrangements =
            multinomial(&counts).to_u128().ok_or_else(|| Error::arg("atom permutation count exceeds 128 bits"))?;
        Ok(Atom { values, distinct, nonzero, arrangements })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn nonzero_count(&self) -> u32 {
        self.nonzero
    }

    /// Number of distinct arrangements of the atom's entries.
    pub fn arrangements(&self) -> u128 {
        self.arrangements
    }

    /// Number of sphere points whose normalized form is this atom.
    pub fn point_count(&self) -> BigUint {
        BigUint::from(self.arrangements) << self.nonzero
    }

    fn distinct_index(&self, v: u32) -> Option<usize> {
        self.distinct.iter().position(|&(x, _)| x == v)
    }

    fn dot_sorted(&self, sorted_abs: &[f64]) -> f64 {
        self.values.iter().take(self.nonzero as usize).zip(sorted_abs).map(|(&a, &y)| f64::from(a) * y).sum()
    }
}

/// `n! / prod(c_i!)` for `n = sum(c_i)`.
fn multinomial(counts: &[u32]) -> BigUint {
    let mut result = BigUint::from(1u32);
    let mut n = 0u32;
    for &c in counts {
        for i in 1..=c {
            n += 1;
            result *= n;
            result /= i;
        }
    }
    result
}

/// All atoms of `S_d^r`, i.e. non-increasing non-negative integer `d`-tuples
/// with squared sum `r2`, in lexicographically decreasing order.
pub fn enumerate_atoms(d: usize, r2: u32) -> Vec<Vec<u32>> {
    fn recurse(remaining_dims: usize, remaining: u32, max: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if remaining == 0 {
            let mut atom = prefix.clone();
            atom.resize(prefix.len() + remaining_dims, 0);
            out.push(atom);
            return;
        }
        if remaining_dims == 0 {
            return;
        }
        let mut v = max.min(isqrt(remaining));
        while v >= 1 {
            // The remaining dims can hold at most remaining_dims * v² with values <= v.
            if (remaining_dims as u64) * u64::from(v) * u64::from(v) < u64::from(remaining) {
                break;
            }
            prefix.push(v);
            recurse(remaining_dims - 1, remaining - v * v, v, prefix, out);
            prefix.pop();
            v -= 1;
        }
    }

    let mut out = Vec::new();
    if d == 0 || r2 == 0 {
        return out;
    }
    recurse(d, r2, u32::MAX, &mut Vec::with_capacity(d), &mut out);
    out
}

fn isqrt(n: u32) -> u32 {
    let mut r = f64::from(n).sqrt() as u32;
    while u64::from(r) * u64::from(r) > u64::from(n) {
        r -= 1;
    }
    while u64::from(r + 1) * u64::from(r + 1) <= u64::from(n) {
        r += 1;
    }
    r
}

/// Total number of points of `S_d^r`, computed from its atoms.
pub fn count_points(d: usize, r2: u32) -> BigUint {
    enumerate_atoms(d, r2)
        .into_iter()
        .map(|values| {
            let atom = Atom::new(values).expect("enumerated atoms are non-increasing");
            atom.point_count()
        })
        .fold(BigUint::zero(), |acc, c| acc + c)
}

/// Number of bits needed to index `count` codes.
pub fn bits_for_count(count: &BigUint) -> u32 {
    if count <= &BigUint::from(1u32) {
        0
    } else {
        (count - 1u32).bits() as u32
    }
}

/// Lexicographic rank of `arrangement` among the distinct permutations of `atom`.
pub fn perm_rank(atom: &Atom, arrangement: &[u32]) -> Result<u128> {
    if arrangement.len() != atom.values.len() {
        return Err(Error::arg(format!(
            "arrangement has {} entries, atom has {}",
            arrangement.len(),
            atom.values.len()
        )));
    }
    let mut counts: Vec<u32> = atom.distinct.iter().map(|&(_, c)| c).collect();
    let mut total = atom.arrangements;
    let mut rank = 0u128;
    for (pos, &v) in arrangement.iter().enumerate() {
        let j = atom
            .distinct_index(v)
            .filter(|&j| counts[j] > 0)
            .ok_or_else(|| Error::arg("arrangement is not a permutation of the atom"))?;
        let left = (arrangement.len() - pos) as u128;
        for &c in &counts[..j] {
            rank += total * u128::from(c) / left;
        }
        total = total * u128::from(counts[j]) / left;
        counts[j] -= 1;
    }
    Ok(rank)
}

/// Inverse of [`perm_rank`].
pub fn perm_unrank(atom: &Atom, rank: u128) -> Result<Vec<u32>> {
    let mut out = vec![0u32; atom.values.len()];
    perm_unrank_into(atom, rank, &mut out)?;
    Ok(out)
}

fn perm_unrank_into(atom: &Atom, mut rank: u128, out: &mut [u32]) -> Result<()> {
    if rank >= atom.arrangements {
        return Err(Error::arg(format!("rank {rank} out of range for {} arrangements", atom.arrangements)));
    }
    let mut counts: Vec<u32> = atom.distinct.iter().map(|&(_, c)| c).collect();
    let mut total = atom.arrangements;
    let d = out.len();
    for (pos, slot) in out.iter_mut().enumerate() {
        let left = (d - pos) as u128;
        for (j, count) in counts.iter_mut().enumerate() {
            if *count == 0 {
                continue;
            }
            let block = total * u128::from(*count) / left;
            if rank < block {
                *slot = atom.distinct[j].0;
                *count -= 1;
                total = block;
                break;
            }
            rank -= block;
        }
    }
    Ok(())
}

/// Immutable description of `S_d^r` with its code layout.
#[derive(Clone, Debug)]
pub struct LatticeCodebook {
    d: usize,
    r2: u32,
    radius: f64,
    atoms: Vec<Atom>,
    offsets: Vec<u128>,
    index: HashMap<Vec<u32>, usize>,
    total: u128,
    bits: u32,
}

impl LatticeCodebook {
    pub fn new(d: usize, r2: u32) -> Result<Self> {
        if d == 0 || r2 == 0 {
            return Err(Error::arg("lattice dimension and squared radius must be positive"));
        }
        let atoms = enumerate_atoms(d, r2).into_iter().map(Atom::new).collect::<Result<Vec<_>>>()?;
        if atoms.is_empty() {
            return Err(Error::arg(format!("{r2} is not a sum of {d} squares: the sphere has no integer points")));
        }
        let total_big = atoms.iter().map(Atom::point_count).fold(BigUint::zero(), |acc, c| acc + c);
        let bits = bits_for_count(&total_big);
        if bits > MAX_CODE_BITS {
            return Err(Error::arg(format!("S_{d}^sqrt({r2}) needs {bits} bits, more than {MAX_CODE_BITS}")));
        }
        let total = total_big.to_u128().expect("checked against MAX_CODE_BITS");
        let mut offsets = Vec::with_capacity(atoms.len());
        let mut acc = 0u128;
        for atom in &atoms {
            offsets.push(acc);
            acc += atom.arrangements << atom.nonzero;
        }
        let index = atoms.iter().enumerate().map(|(i, a)| (a.values.clone(), i)).collect();
        Ok(LatticeCodebook { d, r2, radius: f64::from(r2).sqrt(), atoms, offsets, index, total, bits })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn r2(&self) -> u32 {
        self.r2
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Start of each atom's code range.
    pub fn offsets(&self) -> &[u128] {
        &self.offsets
    }

    pub fn count(&self) -> u128 {
        self.total
    }

    pub fn count_points(&self) -> BigUint {
        BigUint::from(self.total)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Nearest point of the sphere to `y`, i.e. the point maximizing `y · z`.
    ///
    /// Ties between atoms go to the earlier atom; ties in `|y|` keep the
    /// original coordinate order; a zero coordinate takes a positive sign.
    pub fn assign<T: Copy + Into<f64>>(&self, y: &[T]) -> Result<Vec<i32>> {
        let mut z = vec![0i32; self.d];
        self.assign_into(y, &mut z)?;
        Ok(z)
    }

    pub fn assign_into<T: Copy + Into<f64>>(&self, y: &[T], z: &mut [i32]) -> Result<()> {
        if y.len() != self.d || z.len() != self.d {
            return Err(Error::arg(format!("expected {} coordinates, got {}", self.d, y.len())));
        }
        let y: Vec<f64> = y.iter().map(|&v| v.into()).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cannot assign a non-finite vector".into()));
        }
        let mut order: Vec<usize> = (0..self.d).collect();
        // Stable, so equal magnitudes keep index order.
        order.sort_by(|&a, &b| y[b].abs().total_cmp(&y[a].abs()));
        let sorted_abs: Vec<f64> = order.iter().map(|&i| y[i].abs()).collect();

        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, atom) in self.atoms.iter().enumerate() {
            let dot = atom.dot_sorted(&sorted_abs);
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        for (rank, &coord) in order.iter().enumerate() {
            let v = self.atoms[best].values[rank] as i32;
            z[coord] = if y[coord] < 0.0 { -v } else { v };
        }
        Ok(())
    }

    /// Assignment rescaled onto the unit sphere: `assign(y) / r`.
    pub fn quantize<T: Copy + Into<f64>>(&self, y: &[T]) -> Result<Vec<f64>> {
        let z = self.assign(y)?;
        Ok(z.iter().map(|&v| f64::from(v) / self.radius).collect())
    }

    pub fn encode(&self, z: &[i32]) -> Result<u128> {
        if z.len() != self.d {
            return Err(Error::arg(format!("expected {} coordinates, got {}", self.d, z.len())));
        }
        let norm2: i64 = z.iter().map(|&v| i64::from(v) * i64::from(v)).sum();
        if norm2 != i64::from(self.r2) {
            return Err(Error::arg(format!("point has squared norm {norm2}, expected {}", self.r2)));
        }
        let arrangement: Vec<u32> = z.iter().map(|v| v.unsigned_abs()).collect();
        let mut normalized = arrangement.clone();
        normalized.sort_unstable_by(|a, b| b.cmp(a));
        let atom_id =
            *self.index.get(&normalized).ok_or_else(|| Error::arg("point does not normalize to a known atom"))?;
        let atom = &self.atoms[atom_id];
        let rank = perm_rank(atom, &arrangement)?;
        let mut signs = 0u128;
        for &v in z.iter().filter(|&&v| v != 0) {
            signs = (signs << 1) | u128::from(v < 0);
        }
        Ok(self.offsets[atom_id] + (rank << atom.nonzero) + signs)
    }

    /// Assigns and encodes every row of `x`.
    pub fn encode_all(&self, x: &VectorSet) -> Result<Vec<u128>> {
        if !x.is_empty() && x.dim() != self.d {
            return Err(Error::arg(format!("vectors have dimension {}, lattice has {}", x.dim(), self.d)));
        }
        (0..x.len())
            .into_par_iter()
            .map_init(
                || vec![0i32; self.d],
                |z, i| {
                    self.assign_into(x.row(i), z)?;
                    self.encode(z)
                },
            )
            .collect()
    }

    pub fn decode(&self, code: u128) -> Result<Vec<i32>> {
        let mut z = vec![0i32; self.d];
        self.decode_into(code, &mut z)?;
        Ok(z)
    }

    pub fn decode_into(&self, code: u128, z: &mut [i32]) -> Result<()> {
        if code >= self.total {
            return Err(Error::arg(format!("code {code} out of range for {} points", self.total)));
        }
        if z.len() != self.d {
            return Err(Error::arg(format!("output buffer has {} entries, expected {}", z.len(), self.d)));
        }
        let atom_id = self.offsets.partition_point(|&o| o <= code) - 1;
        let atom = &self.atoms[atom_id];
        let local = code - self.offsets[atom_id];
        let rank = local >> atom.nonzero;
        let mut arrangement = vec![0u32; self.d];
        perm_unrank_into(atom, rank, &mut arrangement)?;
        let mut bit = atom.nonzero;
        for (out, &v) in z.iter_mut().zip(&arrangement) {
            *out = if v == 0 {
                0
            } else {
                bit -= 1;
                if (local >> bit) & 1 == 1 {
                    -(v as i32)
                } else {
                    v as i32
                }
            };
        }
        Ok(())
    }

    /// `||q - z/r||²` for a unit query, evaluated as `2 - 2 q·z / r`.
    pub fn asymmetric_distance(&self, query: &[f32], code: u128) -> Result<f64> {
        let z = self.decode(code)?;
        Ok(self.asymmetric_distance_to_point(query, &z))
    }

    #[inline]
    pub fn asymmetric_distance_to_point(&self, query: &[f32], z: &[i32]) -> f64 {
        let dot: f64 = query.iter().zip(z).map(|(&q, &v)| f64::from(q) * f64::from(v)).sum();
        2.0 - 2.0 * dot / self.radius
    }
}

const LATTICE_MAGIC: &[u8; 6] = b"SPLAT1";

/// A set of lattice codes with the parameters needed to decode them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeCodeFile {
    pub d: u32,
    pub r2: u32,
    pub count: u128,
    pub bits: u8,
    pub codes: Vec<u128>,
}

impl LatticeCodeFile {
    pub fn new(codebook: &LatticeCodebook, codes: Vec<u128>) -> Self {
        LatticeCodeFile {
            d: codebook.dim() as u32,
            r2: codebook.r2(),
            count: codebook.count(),
            bits: codebook.bits() as u8,
            codes,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = usize::from(self.bits);
        let mut out = Vec::with_capacity(39 + (self.codes.len() * w).div_ceil(8));
        out.extend_from_slice(LATTICE_MAGIC);
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend_from_slice(&self.r2.to_le_bytes());
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        out.extend_from_slice(&((self.count >> 64) as u64).to_le_bytes());
        out.push(self.bits);
        out.extend_from_slice(&(self.codes.len() as u64).to_le_bytes());
        out.extend_from_slice(&pack_bits(&self.codes, w));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 6 + 4 + 4 + 8 + 8 + 1 + 8;
        if bytes.len() < HEADER {
            return Err(Error::format(bytes.len() as u64, "truncated lattice code header"));
        }
        if &bytes[..6] != LATTICE_MAGIC {
            return Err(Error::format(0, "not a lattice code file (bad magic or version)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let d = u32_at(6);
        let r2 = u32_at(10);
        let count = u128::from(u64_at(14)) | (u128::from(u64_at(22)) << 64);
        let bits = bytes[30];
        let n = usize::try_from(u64_at(31)).map_err(|_| Error::format(31, "code count overflows"))?;
        if u32::from(bits) > MAX_CODE_BITS {
            return Err(Error::format(30, format!("unsupported code width {bits}")));
        }
        let payload = &bytes[HEADER..];
        let needed = n
            .checked_mul(usize::from(bits))
            .map(|b| b.div_ceil(8))
            .ok_or_else(|| Error::format(31, "code count overflows"))?;
        if payload.len() != needed {
            return Err(Error::format(
                HEADER as u64,
                format!("expected {needed} payload bytes for {n} codes, found {}", payload.len()),
            ));
        }
        let codes = unpack_bits(payload, n, usize::from(bits));
        if let Some(i) = codes.iter().position(|&c| c >= count) {
            return Err(Error::format(HEADER as u64, format!("code {i} is out of range")));
        }
        Ok(LatticeCodeFile { d, r2, count, bits, codes })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        LatticeCodeFile::from_bytes(&fs::read(path)?)
    }

    /// Rebuilds the codebook and checks it matches the stored layout.
    pub fn codebook(&self) -> Result<LatticeCodebook> {
        let cb = LatticeCodebook::new(self.d as usize, self.r2)?;
        if cb.count() != self.count || cb.bits() != u32::from(self.bits) {
            return Err(Error::format(14, "stored point count does not match the lattice parameters"));
        }
        Ok(cb)
    }
}

/// Packs `width`-bit values contiguously, least significant bit first.
pub fn pack_bits(values: &[u128], width: usize) -> Vec<u8> {
    let mut out = vec![0u8; (values.len() * width).div_ceil(8)];
    let mut pos = 0usize;
    for &v in values {
        for b in 0..width {
            if (v >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize, width: usize) -> Vec<u128> {
    let mut pos = 0usize;
    (0..n)
        .map(|_| {
            let mut v = 0u128;
            for b in 0..width {
                if (bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                    v |= 1 << b;
                }
                pos += 1;
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_of_s8_sqrt10() {
        assert_eq!(
            enumerate_atoms(8, 10),
            vec![vec![3, 1, 0, 0, 0, 0, 0, 0], vec![2, 2, 1, 1, 0, 0, 0, 0], vec![2, 1, 1, 1, 1, 1, 1, 0]]
        );
    }

    #[test]
    fn small_atom_sets() {
        assert_eq!(enumerate_atoms(2, 1), vec![vec![1, 0]]);
        assert!(enumerate_atoms(3, 7).is_empty());
        assert!(LatticeCodebook::new(3, 7).is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(count_points(24, 1), BigUint::from(48u32));
        assert_eq!(count_points(8, 10), BigUint::from(14112u32));
        let cb = LatticeCodebook::new(8, 10).unwrap();
        assert_eq!(cb.bits(), 14);
        let arrangements: Vec<u128> = cb.atoms().iter().map(Atom::arrangements).collect();
        assert_eq!(arrangements, vec![56, 420, 56]);
    }

    #[test]
    fn offsets_partition_code_space() {
        let cb = LatticeCodebook::new(8, 10).unwrap();
        assert_eq!(cb.offsets(), &[0, 56 * 4, 56 * 4 + 420 * 16]);
        assert_eq!(cb.count(), 56 * 4 + 420 * 16 + 56 * 128);
    }

    #[test]
    fn tiny_code_layout() {
        let cb = LatticeCodebook::new(2, 1).unwrap();
        let codes: Vec<u128> = [[1, 0], [-1, 0], [0, 1], [0, -1]].iter().map(|z| cb.encode(z).unwrap()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3]);
        assert!(cb.decode(4).is_err());
    }

    #[test]
    fn rank_zero_is_the_atom() {
        let atom = Atom::new(vec![2, 2, 1, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(perm_rank(&atom, atom.values()).unwrap(), 0);
        assert_eq!(atom.arrangements(), 420);
        assert_eq!(perm_unrank(&atom, 419).unwrap(), vec![0, 0, 0, 0, 1, 1, 2, 2]);
        assert!(perm_unrank(&atom, 420).is_err());
    }

    #[test]
    fn rank_rejects_foreign_arrangement() {
        let atom = Atom::new(vec![2, 1, 1, 0]).unwrap();
        assert!(perm_rank(&atom, &[2, 2, 1, 0]).is_err());
        assert!(perm_rank(&atom, &[2, 1, 1]).is_err());
    }

    #[test]
    fn encode_rejects_off_sphere() {
        let cb = LatticeCodebook::new(8, 10).unwrap();
        assert!(cb.encode(&[3, 1, 1, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn assign_examples() {
        let cb = LatticeCodebook::new(8, 10).unwrap();
        let y = [3.0f64, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(cb.assign(&y).unwrap(), vec![3, 1, 0, 0, 0, 0, 0, 0]);
        let y = [0.6f64, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(cb.assign(&y).unwrap(), vec![1, 3, 0, 0, 0, 0, 0, 0]);
        let y = [0.0f64, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let z = cb.assign(&y).unwrap();
        assert!(z[1] < 0);
        assert_eq!(z, vec![1, -3, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn asymmetric_distance_cases() {
        let cb = LatticeCodebook::new(2, 1).unwrap();
        let code = cb.encode(&[1, 0]).unwrap();
        assert!(cb.asymmetric_distance(&[1.0, 0.0], code).unwrap().abs() < 1e-12);
        assert!((cb.asymmetric_distance(&[0.0, 1.0], code).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn code_file_rejects_bad_magic() {
        let cb = LatticeCodebook::new(8, 10).unwrap();
        let mut bytes = LatticeCodeFile::new(&cb, vec![0, 1, 14111]).to_bytes();
        assert_eq!(LatticeCodeFile::from_bytes(&bytes).unwrap().codes, vec![0, 1, 14111]);
        bytes[5] = b'2';
        assert!(matches!(LatticeCodeFile::from_bytes(&bytes), Err(Error::Format { .. })));
    }
}
