// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clime;
pub mod data;
pub mod error;
pub mod iq;
pub mod lasso;
pub mod overid;
pub mod rng;
pub mod sim;
pub mod simplex;

pub use error::{HdivError, Result};
