//! C ABI over the lattice codec, sign binarization and catalyzer inference.
//!
//! Every fallible call returns a [`SpcatStatus`]; on failure the message is
//! available from [`spcat_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use spcat::binarycodes::{binarize, ProjectionBasis};
use spcat::lattice::LatticeCodebook;
use spcat::nn::CatalyzerModel;
use spcat::searcheval::scan_lattice;
use spcat::vecio::VectorSet;
use spcat::Error;

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SpcatStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Format = 3,
    Numeric = 4,
    NullPointer = 5,
    Panic = 6,
}

/// A lattice code split into two 64-bit halves.
#[repr(C)]
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct SpcatCode {
    pub lo: u64,
    pub hi: u64,
}

impl From<u128> for SpcatCode {
    fn from(c: u128) -> Self {
        SpcatCode { lo: c as u64, hi: (c >> 64) as u64 }
    }
}

impl From<SpcatCode> for u128 {
    fn from(c: SpcatCode) -> Self {
        u128::from(c.lo) | (u128::from(c.hi) << 64)
    }
}

pub struct SpcatCodebook(LatticeCodebook);

pub struct SpcatModel(CatalyzerModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpcatStatus {
    match e {
        Error::Io(_) => SpcatStatus::Io,
        Error::Format { .. } => SpcatStatus::Format,
        Error::Numeric(_) => SpcatStatus::Numeric,
        Error::Argument(_) | Error::ZeroNorm { .. } | Error::RankDeficient { .. } => SpcatStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpcatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpcatStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            SpcatStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SpcatStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(slice::from_raw_parts(non_null(p, what)?, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spcat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates the codebook of integer points in `d` dimensions with squared norm `r2`.
///
/// # Safety
/// `out` must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_new(d: usize, r2: u32, out: *mut *mut SpcatCodebook) -> SpcatStatus {
    guard(|| {
        non_null(out, "out")?;
        let cb = LatticeCodebook::new(d, r2)?;
        *out = Box::into_raw(Box::new(SpcatCodebook(cb)));
        Ok(())
    })
}

/// # Safety
/// `cb` must be null or a handle from [`spcat_codebook_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_free(cb: *mut SpcatCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// Code width in bits, 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live codebook handle.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_bits(cb: *const SpcatCodebook) -> u32 {
    cb.as_ref().map_or(0, |c| c.0.bits())
}

/// Dimension, 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live codebook handle.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_dim(cb: *const SpcatCodebook) -> usize {
    cb.as_ref().map_or(0, |c| c.0.dim())
}

/// Number of points on the sphere.
///
/// # Safety
/// `cb` must be a live codebook handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_count(cb: *const SpcatCodebook, out: *mut SpcatCode) -> SpcatStatus {
    guard(|| {
        let cb = &non_null(cb, "codebook")?.as_ref().unwrap().0;
        non_null(out, "out")?;
        *out = cb.count().into();
        Ok(())
    })
}

/// Nearest lattice points (by direction) of `n` row-major vectors: `points` receives `n * d` integers.
///
/// # Safety
/// `x` holds `n * d` floats, `points` has room for `n * d` integers.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_assign(
    cb: *const SpcatCodebook,
    x: *const f32,
    n: usize,
    points: *mut i32,
) -> SpcatStatus {
    guard(|| {
        let cb = &non_null(cb, "codebook")?.as_ref().unwrap().0;
        let d = cb.dim();
        let x = input(x, n * d, "x")?;
        let points = output(points, n * d, "points")?;
        for (row, z) in x.chunks_exact(d).zip(points.chunks_exact_mut(d)) {
            cb.assign_into(row, z)?;
        }
        Ok(())
    })
}

/// Assigns and encodes `n` row-major vectors.
///
/// # Safety
/// `x` holds `n * d` floats, `codes` has room for `n` codes.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_encode(
    cb: *const SpcatCodebook,
    x: *const f32,
    n: usize,
    codes: *mut SpcatCode,
) -> SpcatStatus {
    guard(|| {
        let cb = &non_null(cb, "codebook")?.as_ref().unwrap().0;
        let x = input(x, n * cb.dim(), "x")?;
        let codes = output(codes, n, "codes")?;
        let encoded = cb.encode_all(&VectorSet::new(cb.dim(), x.to_vec())?)?;
        for (o, c) in codes.iter_mut().zip(encoded) {
            *o = c.into();
        }
        Ok(())
    })
}

/// Decodes `n` codes into `n * d` integer coordinates.
///
/// # Safety
/// `codes` holds `n` codes, `points` has room for `n * d` integers.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_decode(
    cb: *const SpcatCodebook,
    codes: *const SpcatCode,
    n: usize,
    points: *mut i32,
) -> SpcatStatus {
    guard(|| {
        let cb = &non_null(cb, "codebook")?.as_ref().unwrap().0;
        let d = cb.dim();
        let codes = input(codes, n, "codes")?;
        let points = output(points, n * d, "points")?;
        for (&c, z) in codes.iter().zip(points.chunks_exact_mut(d)) {
            cb.decode_into(c.into(), z)?;
        }
        Ok(())
    })
}

/// Squared distance between a unit query and the normalized point of `code`.
///
/// # Safety
/// `query` holds `d` floats and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_distance(
    cb: *const SpcatCodebook,
    query: *const f32,
    code: SpcatCode,
    out: *mut f64,
) -> SpcatStatus {
    guard(|| {
        let cb = &non_null(cb, "codebook")?.as_ref().unwrap().0;
        let q = input(query, cb.dim(), "query")?;
        non_null(out, "out")?;
        *out = cb.asymmetric_distance(q, code.into())?;
        Ok(())
    })
}

/// Exhaustive top-`k` search of `nq` queries over `n` codes; writes `nq * k` ids.
///
/// # Safety
/// `queries` holds `nq * d` floats, `codes` holds `n` codes, `ids` has room for `nq * k` values.
#[no_mangle]
pub unsafe extern "C" fn spcat_codebook_search(
    cb: *const SpcatCodebook,
    queries: *const f32,
    nq: usize,
    codes: *const SpcatCode,
    n: usize,
    k: usize,
    ids: *mut u64,
) -> SpcatStatus {
    guard(|| {
        let cb = &non_null(cb, "codebook")?.as_ref().unwrap().0;
        let q = VectorSet::new(cb.dim(), input(queries, nq * cb.dim(), "queries")?.to_vec())?;
        let codes: Vec<u128> = input(codes, n, "codes")?.iter().map(|&c| c.into()).collect();
        let ids = output(ids, nq * k, "ids")?;
        let results = scan_lattice(&q, &codes, cb, k)?;
        for (o, id) in ids.iter_mut().zip(results.concat()) {
            *o = id as u64;
        }
        Ok(())
    })
}

/// Sign bits of `n` row-major `d`-dimensional vectors; each row takes `ceil(d / 64)` words,
/// bit `j` of a row is set when coordinate `j` is non-negative.
///
/// # Safety
/// `x` holds `n * d` floats, `words` has room for `n * ceil(d / 64)` values.
#[no_mangle]
pub unsafe extern "C" fn spcat_binarize(x: *const f32, n: usize, d: usize, words: *mut u64) -> SpcatStatus {
    guard(|| {
        if d == 0 {
            return Err(Error::Argument("dimension must be positive".into()).into());
        }
        let x = input(x, n * d, "x")?;
        let w = d.div_ceil(64);
        let words = output(words, n * w, "words")?;
        let basis = ProjectionBasis::identity(d);
        for (row, out) in x.chunks_exact(d).zip(words.chunks_exact_mut(w)) {
            out.copy_from_slice(&binarize(row, &basis)?);
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `spcat train`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spcat_model_load(path: *const c_char, out: *mut *mut SpcatModel) -> SpcatStatus {
    guard(|| {
        let path = CStr::from_ptr(non_null(path, "path")?);
        non_null(out, "out")?;
        let path = path.to_str().map_err(|_| Error::Argument("path is not UTF-8".into()))?;
        let model = CatalyzerModel::load(path)?;
        *out = Box::into_raw(Box::new(SpcatModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`spcat_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcat_model_free(model: *mut SpcatModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input and output dimensions of a model.
///
/// # Safety
/// `model` must be a live handle; `d_in` and `d_out` writable.
#[no_mangle]
pub unsafe extern "C" fn spcat_model_dims(
    model: *const SpcatModel,
    d_in: *mut usize,
    d_out: *mut usize,
) -> SpcatStatus {
    guard(|| {
        let m = &non_null(model, "model")?.as_ref().unwrap().0;
        non_null(d_in, "d_in")?;
        non_null(d_out, "d_out")?;
        *d_in = m.d_in;
        *d_out = m.d_out;
        Ok(())
    })
}

/// Maps `n` row-major vectors onto the unit sphere of the output space.
///
/// # Safety
/// `x` holds `n * d_in` floats and `y` has room for `n * d_out` floats.
#[no_mangle]
pub unsafe extern "C" fn spcat_model_transform(
    model: *const SpcatModel,
    x: *const f32,
    n: usize,
    y: *mut f32,
) -> SpcatStatus {
    guard(|| {
        let m = &non_null(model, "model")?.as_ref().unwrap().0;
        let x = input(x, n * m.d_in, "x")?;
        let y = output(y, n * m.d_out, "y")?;
        if n == 0 {
            return Ok(());
        }
        let features = m.transform(&VectorSet::new(m.d_in, x.to_vec())?)?;
        y.copy_from_slice(features.as_slice());
        Ok(())
    })
}
