//! Linear algebra helpers: fixed-size matrices for element geometry and
//! dense factorizations for the ensemble filters.

pub mod dense;
pub mod small;

pub use small::{Point, SMat};
