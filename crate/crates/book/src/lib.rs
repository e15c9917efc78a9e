//! The guide's code listings, compiled and run as doc-tests.
//!
//! mdbook cannot link listings against workspace crates, so each chapter is
//! included here as the documentation of an empty module and `cargo test
//! --doc` runs it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/lasso.md")]
pub mod lasso {}

#[doc = include_str!("../../../book/src/clime.md")]
pub mod clime {}

#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
