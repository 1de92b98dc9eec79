//! Continuous-Galerkin discretisation on quadtree meshes.

mod linalg;
mod space;

pub use linalg::{
    solve_newton, solve_sparse_lu, solve_spd, solve_spd_from, CsrMatrix, NewtonOutcome, NewtonSettings,
    SolverSettings, SpdSolution,
};
pub use space::{jacobian_det, map_to_leaf, ElementTables, FeSpace, GaussField, NodalField};
