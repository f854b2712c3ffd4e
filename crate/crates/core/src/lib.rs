//! Functional mixture prediction for partially observed daily curves.

pub mod classify;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod fpca;
pub mod hexfloat;
pub mod numerics;
pub mod pipeline;
pub mod predict;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
