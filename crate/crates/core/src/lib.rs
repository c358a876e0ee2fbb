// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod linalg;
pub mod singularity;
pub mod spin_model;
pub mod svm;
pub mod verify;

pub use error::{Error, Result};
