// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binarycodes;
pub mod error;
pub mod lattice;
pub mod losses;
pub mod nn;
pub mod searcheval;
pub mod synthetic;
pub mod topk;
pub mod trainer;
pub mod vecio;

pub use error::{Error, Result};
