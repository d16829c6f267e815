//! Debiasing weights for empirical risk minimization on several biased samples.
//!
//! Each sample is drawn from a known distortion of one target law. The
//! crate estimates the unknown normalizers, builds the weighted empirical
//! measure that undoes the distortion, and fits weighted learners on it.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod assumptions;
pub mod bias_model;
pub mod cli;
pub mod distribution;
pub mod erm;
pub mod error;
pub mod io;
pub mod scenario;
pub mod solver;

pub use bias_model::{evaluate_bias_matrix, BiasDef, BiasingFunction, Observation, PooledData, Target};
pub use distribution::DebiasedDistribution;
pub use error::{Error, Result};
pub use solver::{solve_w, SolverConfig, SolverMethod, SolverResult};
