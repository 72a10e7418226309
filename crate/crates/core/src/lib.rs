pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
