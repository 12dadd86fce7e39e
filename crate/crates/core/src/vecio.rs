//! Vector datasets: the `.fvecs` / `.bvecs` / `.ivecs` benchmark formats,
//! normalization, and exact nearest-neighbor ground truth.
//!
//! Every record in these formats is a little-endian `i32` dimension followed by
//! that many components (`f32`, `u8` or `i32` respectively). All records of a
//! file must share the same dimension.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::topk::TopK;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VecFormat {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl VecFormat {
    fn component_size(self) -> usize {
        match self {
            VecFormat::Bvecs => 1,
            VecFormat::Fvecs | VecFormat::Ivecs => 4,
        }
    }

    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for VecFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvecs" => Ok(VecFormat::Fvecs),
            "bvecs" => Ok(VecFormat::Bvecs),
            "ivecs" => Ok(VecFormat::Ivecs),
            other => Err(Error::arg(format!("unknown vector format {other:?}"))),
        }
    }
}

impl fmt::Display for VecFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VecFormat::Fvecs => "fvecs",
            VecFormat::Bvecs => "bvecs",
            VecFormat::Ivecs => "ivecs",
        })
    }
}

/// Dense row-major `n × d` matrix of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSet {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl VectorSet {
    /// Builds a set from row-major data. Fails if `data.len()` is not a multiple
    /// of `d` or if any entry is not finite.
    pub fn new(d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            if !data.is_empty() {
                return Err(Error::arg("dimension 0 with non-empty data"));
            }
            return Ok(VectorSet::empty());
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::arg(format!("data length {} is not a multiple of dimension {d}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite entry in row {}", pos / d)));
        }
        Ok(VectorSet { n: data.len() / d, d, data })
    }

    pub fn empty() -> Self {
        VectorSet { n: 0, d: 0, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(VectorSet::empty());
        };
        let d = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::arg(format!("row {i} has {} entries, expected {d}", row.len())));
            }
            data.extend_from_slice(row);
        }
        VectorSet::new(d, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on 0, and an empty set has no rows anyway.
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    /// Copy of rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n {
            return Err(Error::arg(format!("row range {start}..{end} out of bounds for {} rows", self.n)));
        }
        Ok(VectorSet { n: end - start, d: self.d, data: self.data[start * self.d..end * self.d].to_vec() })
    }

    /// Copy of the listed rows, in the given order.
    pub fn select(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        VectorSet { n: ids.len(), d: self.d, data }
    }
}

/// Integer matrix as stored in `.ivecs` files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    pub n: usize,
    pub d: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Exact neighbors of each query, as 0-based base indices sorted by increasing distance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    k: usize,
    ids: Vec<usize>,
}

impl GroundTruth {
    pub fn new(k: usize, ids: Vec<usize>) -> Result<Self> {
        if k == 0 || !ids.len().is_multiple_of(k) {
            return Err(Error::arg(format!("ground truth of {} ids is not a multiple of k={k}", ids.len())));
        }
        Ok(GroundTruth { k, ids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_queries(&self) -> usize {
        self.ids.len() / self.k
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.ids[q * self.k..(q + 1) * self.k]
    }

    /// The true nearest neighbor of query `q`.
    pub fn nearest(&self, q: usize) -> usize {
        self.ids[q * self.k]
    }

    pub fn to_int_matrix(&self) -> IntMatrix {
        IntMatrix { n: self.num_queries(), d: self.k, data: self.ids.iter().map(|&i| i as i32).collect() }
    }

    pub fn from_int_matrix(m: &IntMatrix) -> Result<Self> {
        let ids = m
            .data
            .iter()
            .map(|&v| usize::try_from(v).map_err(|_| Error::arg(format!("negative id {v} in ground truth"))))
            .collect::<Result<Vec<_>>>()?;
        GroundTruth::new(m.d, ids)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        GroundTruth::from_int_matrix(&read_ivecs(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ivecs(path, &self.to_int_matrix())
    }
}

/// Walks the records of a vecs file, yielding `(record offset, payload)`.
fn parse_records(bytes: &[u8], format: VecFormat) -> Result<(usize, Vec<&[u8]>)> {
    let elem = format.component_size();
    let mut offset = 0usize;
    let mut dim: Option<usize> = None;
    let mut records = Vec::new();
    while offset < bytes.len() {
        let header =
            bytes.get(offset..offset + 4).ok_or_else(|| Error::format(offset as u64, "truncated record header"))?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(Error::format(offset as u64, format!("invalid record dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::format(
                    offset as u64,
                    format!("record declares dimension {d}, previous records had {expected}"),
                ));
            }
            Some(_) => {}
        }
        let start = offset + 4;
        let end = start + d * elem;
        let payload = bytes.get(start..end).ok_or_else(|| {
            Error::format(
                offset as u64,
                format!("truncated record: need {} payload bytes, {} left", d * elem, bytes.len() - start),
            )
        })?;
        records.push(payload);
        offset = end;
    }
    Ok((dim.unwrap_or(0), records))
}

/// Decodes an in-memory vecs file. `ivecs` payloads are converted to `f32`.
pub fn decode_vecs(bytes: &[u8], format: VecFormat) -> Result<VectorSet> {
    let (d, records) = parse_records(bytes, format)?;
    let mut data = Vec::with_capacity(records.len() * d);
    for (r, payload) in records.iter().enumerate() {
        match format {
            VecFormat::Fvecs => {
                for (c, chunk) in payload.chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap());
                    if !v.is_finite() {
                        let offset = (r * (4 + 4 * d) + 4 + 4 * c) as u64;
                        return Err(Error::format(offset, "non-finite float"));
                    }
                    data.push(v);
                }
            }
            VecFormat::Bvecs => data.extend(payload.iter().map(|&b| f32::from(b))),
            VecFormat::Ivecs => {
                data.extend(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f32))
            }
        }
    }
    VectorSet::new(d, data)
}

pub fn read_vecs(path: impl AsRef<Path>, format: VecFormat) -> Result<VectorSet> {
    decode_vecs(&fs::read(path)?, format)
}

pub fn decode_ivecs(bytes: &[u8]) -> Result<IntMatrix> {
    let (d, records) = parse_records(bytes, VecFormat::Ivecs)?;
    let data =
        records.iter().flat_map(|p| p.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()))).collect();
    Ok(IntMatrix { n: records.len(), d, data })
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<IntMatrix> {
    decode_ivecs(&fs::read(path)?)
}

fn record_header(d: usize) -> Result<[u8; 4]> {
    let d = i32::try_from(d).map_err(|_| Error::arg(format!("dimension {d} exceeds i32")))?;
    Ok(d.to_le_bytes())
}

pub fn encode_fvecs(v: &VectorSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(v.len() * (4 + 4 * v.dim()));
    let header = record_header(v.dim())?;
    for row in v.rows() {
        out.extend_from_slice(&header);
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_fvecs(path: impl AsRef<Path>, v: &VectorSet) -> Result<()> {
    write_file(path, &encode_fvecs(v)?)
}

/// Writes rows as bytes. Entries must be integers in `0..=255`.
pub fn write_bvecs(path: impl AsRef<Path>, v: &VectorSet) -> Result<()> {
    let mut out = Vec::with_capacity(v.len() * (4 + v.dim()));
    let header = record_header(v.dim())?;
    for (i, row) in v.rows().enumerate() {
        out.extend_from_slice(&header);
        for &x in row {
            if !(0.0..=255.0).contains(&x) || x.fract() != 0.0 {
                return Err(Error::arg(format!("row {i}: value {x} is not a byte")));
            }
            out.push(x as u8);
        }
    }
    write_file(path, &out)
}

pub fn encode_ivecs(m: &IntMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(m.n * (4 + 4 * m.d));
    let header = record_header(m.d)?;
    for i in 0..m.n {
        out.extend_from_slice(&header);
        for x in m.row(i) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ivecs(path: impl AsRef<Path>, m: &IntMatrix) -> Result<()> {
    write_file(path, &encode_ivecs(m)?)
}

pub(crate) fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = f64::from(x) - f64::from(y);
            t * t
        })
        .sum()
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Exact Euclidean k-NN of every query among `base`, ties broken by lower index.
pub fn brute_force_knn(base: &VectorSet, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if k > base.len() {
        return Err(Error::arg(format!("k={k} exceeds base size {}", base.len())));
    }
    if !queries.is_empty() && base.dim() != queries.dim() {
        return Err(Error::arg(format!("base dimension {} != query dimension {}", base.dim(), queries.dim())));
    }
    let ids: Vec<usize> = (0..queries.len())
        .into_par_iter()
        .flat_map_iter(|q| {
            let query = queries.row(q);
            let mut top = TopK::new(k);
            for (i, row) in base.rows().enumerate() {
                top.push(squared_l2(query, row), i);
            }
            top.into_sorted_ids()
        })
        .collect();
    GroundTruth::new(k, ids)
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(v: &VectorSet) -> Result<VectorSet> {
    let mut data = Vec::with_capacity(v.data.len());
    for (i, row) in v.rows().enumerate() {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        data.extend(row.iter().map(|&x| (f64::from(x) / norm) as f32));
    }
    Ok(VectorSet { n: v.n, d: v.d, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fvecs_bytes(records: &[(i32, &[f32])]) -> Vec<u8> {
        let mut out = Vec::new();
        for (d, vals) in records {
            out.extend_from_slice(&d.to_le_bytes());
            for v in *vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn decodes_two_records() {
        let bytes = fvecs_bytes(&[(2, &[1.0, 2.0]), (2, &[3.0, 4.0])]);
        let v = decode_vecs(&bytes, VecFormat::Fvecs).unwrap();
        assert_eq!((v.len(), v.dim()), (2, 2));
        assert_eq!(v.row(0), &[1.0, 2.0]);
        assert_eq!(v.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn empty_file_is_empty_set() {
        let v = decode_vecs(&[], VecFormat::Fvecs).unwrap();
        assert_eq!((v.len(), v.dim()), (0, 0));
    }

    #[test]
    fn inconsistent_dimension_is_rejected() {
        let bytes = fvecs_bytes(&[(2, &[1.0, 2.0]), (3, &[3.0, 4.0, 5.0])]);
        match decode_vecs(&bytes, VecFormat::Fvecs) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut bytes = fvecs_bytes(&[(2, &[1.0, 2.0]), (2, &[3.0, 4.0])]);
        bytes.truncate(bytes.len() - 2);
        match decode_vecs(&bytes, VecFormat::Fvecs) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected format error, got {other:?}"),
        }
        match decode_vecs(&[2, 0], VecFormat::Fvecs) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bvecs_widen_exactly() {
        let mut bytes = 3i32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let v = decode_vecs(&bytes, VecFormat::Bvecs).unwrap();
        assert_eq!(v.row(0), &[0.0, 128.0, 255.0]);
    }

    #[test]
    fn ivecs_payload_is_integer() {
        let m = IntMatrix { n: 2, d: 3, data: vec![1, -2, 3, 4, 5, i32::MAX] };
        let bytes = encode_ivecs(&m).unwrap();
        assert_eq!(decode_ivecs(&bytes).unwrap(), m);
        let as_floats = decode_vecs(&bytes, VecFormat::Ivecs).unwrap();
        assert_eq!(as_floats.row(0), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn knn_small_cases() {
        let base = VectorSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]).unwrap();
        let q = VectorSet::from_rows(&[[0.9, 0.0]]).unwrap();
        assert_eq!(brute_force_knn(&base, &q, 2).unwrap().row(0), &[1, 0]);

        let q = VectorSet::from_rows(&[[3.0, 0.0]]).unwrap();
        assert_eq!(brute_force_knn(&base, &q, 1).unwrap().row(0), &[2]);

        // (0,0) and (2,0) are both at distance 1 from (1,0).
        let base = VectorSet::from_rows(&[[2.0, 0.0], [0.0, 0.0]]).unwrap();
        let q = VectorSet::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(brute_force_knn(&base, &q, 1).unwrap().row(0), &[0]);
    }

    #[test]
    fn knn_rejects_large_k() {
        let base = VectorSet::from_rows(&[[0.0f32]]).unwrap();
        assert!(matches!(brute_force_knn(&base, &base, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn normalize_cases() {
        let v = VectorSet::from_rows(&[[3.0, 4.0], [1.0, 0.0]]).unwrap();
        let n = l2_normalize(&v).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7 && (n.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(n.row(1), &[1.0, 0.0]);

        let z = VectorSet::from_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize(&z), Err(Error::ZeroNorm { row: 1 })));
    }
}
