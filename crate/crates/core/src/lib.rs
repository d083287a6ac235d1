//! Multiscale linear peridynamics: fine-scale heterogeneous dynamics, the
//! two-scale limit, its macro/micro split with a memory-kernel equation for
//! the homogenized deformation, and the diagnostics that compare them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod expr;
pub mod field;
pub mod grid;
pub mod homogenization;
pub mod microstructure;
pub mod nonlocal_ops;
pub mod output;
pub mod propagators;
pub mod run;
pub mod solvers;

pub use error::{Error, Result};
