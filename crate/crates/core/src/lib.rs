pub mod benchmarks;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod rng;
pub mod student;
pub mod teacher;
pub mod trainer;

pub use error::{Error, Result};
