//! Adaptive quadtree finite elements with a field-conserving coarsening transfer.

pub mod adaptivity;
pub mod error;
pub mod fem;
pub mod harness;
pub mod line;
pub mod mesh;
pub mod models;
pub mod quadrature;
pub mod restriction;
pub mod transfer;

pub use error::{AmrError, Result};
