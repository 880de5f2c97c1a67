//! Self-representation clustering via nonnegative factorization with an
//! adaptive neighbor graph.
//!
//! The crate covers the full pipeline: data ingestion ([`data`]), the
//! probability-simplex neighbor graph ([`graph`]), the multiplicative-update
//! factorizer family ([`factorize`]), clustering quality metrics ([`eval`]),
//! rank statistics ([`stats`]), and a deterministic experiment harness
//! ([`harness`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod factorize;
pub mod graph;
pub mod harness;
pub mod matrix;
pub mod stats;

pub use error::{Error, Result};
