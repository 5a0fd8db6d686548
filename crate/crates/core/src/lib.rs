//! Numerical and combinatorial tools for counting polynomial-growth
//! solutions of divergence-form elliptic operators `div(a∇u) = 0`.

pub mod counting;
pub mod dimension;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod json;
pub mod linalg;
pub mod pde;
pub mod spectral;

pub use error::{Error, Result};
