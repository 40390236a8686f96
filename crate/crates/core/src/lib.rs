//! Matrix-free discontinuous Galerkin spectral elements for the Helmholtz
//! equation with the symmetric interior penalty method.
//!
//! Layering, bottom up: [`polylib`] (1D polynomials and quadrature),
//! [`stdregions`] (reference expansions and sum-factorised kernels),
//! [`mesh`] (box meshes, geometry, orders), [`trace`] (element/trace
//! coupling), [`sipg`] (the operator) and [`krylov`] (solvers, probes).

pub mod dense;
pub mod error;
pub mod krylov;
pub mod mesh;
pub mod polylib;
pub mod sipg;
pub mod stdregions;
pub mod trace;

pub use error::{Error, Result};
