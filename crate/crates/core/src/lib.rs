//! Data-driven reduced-order-model imaging from frequency-domain transfer
//! functions: the regularized Lippmann-Schwinger-Lanczos method.
//!
//! Pipeline, in module order:
//!
//! 1. [`forward`] simulates transfer data `F(λⱼ)`, `dF/dλ(λⱼ)` on a grid.
//! 2. [`rom`] turns data into mass, stiffness and source matrices.
//! 3. [`regularize`] truncates the mass-matrix spectrum and projects.
//! 4. [`lanczos`] orthogonalizes the truncated model.
//! 5. [`internal`] builds data-generated internal fields.
//! 6. [`inversion`] assembles and solves the linearized integral system.
//!
//! [`experiment`] wires those stages into reproducible runs.

pub mod container;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod internal;
pub mod inversion;
pub mod lanczos;
pub mod numerics;
pub mod regularize;
pub mod rom;

pub use error::{LslError, Result};
