pub mod cli;
pub mod error;
pub mod evalbench;
pub mod estimators;
pub mod netcore;
pub mod problems;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
