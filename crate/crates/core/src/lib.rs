//! Monotone P1 finite element schemes for parabolic Hamilton-Jacobi-Bellman
//! equations `-v_t + sup_α (L^α v - d^α) = 0` with homogeneous Dirichlet data.

pub mod assembly;
pub mod config;
pub mod control;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod mesh;
pub mod problems;
pub mod solver;
pub mod sparse;

pub use error::{HjbError, Result};
