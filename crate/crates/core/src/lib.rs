//! H2 performance analysis and state-feedback synthesis for discrete-time
//! linear systems whose coefficient matrices are polynomial functions of an
//! i.i.d. random vector.

pub mod analysis;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod expr;
pub mod factorize;
pub mod model;
pub mod moments;
pub mod sdp;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};

/// The three-state benchmark plant shipped with the crate.
pub const BENCHMARK_PLANT: &str = include_str!("../data/benchmark_plant.json");
