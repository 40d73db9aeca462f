//! Conditioning-based stiffness analysis for ODE initial and boundary
//! value problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bvp;
pub mod conditioning;
pub mod csvio;
pub mod error;
pub mod expr;
pub mod goldens;
pub mod integrate;
pub mod linalg;
pub mod meshsel;
pub mod problem;
pub mod suite;
pub mod variational;

pub use error::{Error, Result};
