//! Dictionary-based state estimation for parameter-dependent linear
//! equations: PBDW recovery, LASSO-homotopy candidate libraries and sketched
//! residual surrogates with an offline-online split.

pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod problems;
pub mod rng;
pub mod sketch;

pub use error::{Error, Result};
