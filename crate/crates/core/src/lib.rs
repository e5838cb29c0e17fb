//! Quasi-periodic solutions of delayed perturbation equations
//! `ẋ = Ax + εf(x(t−τ)) + εg(ωt)` by lattice reduction, multi-scale
//! inversion of the linearized operator, frequency excision and a
//! Nash-Moser style Newton iteration.

pub mod cli;
pub mod config;
pub mod error;
pub mod excision;
pub mod lattice;
pub mod model;
pub mod multiscale;
pub mod newton;
pub mod poly;
pub mod series;
pub mod smalldivisor;
pub mod verification;

pub use error::{QpError, Result};
