pub mod cli;
pub mod config;
pub mod data;
pub mod divergences;
pub mod error;
pub mod model;
pub mod regularizers;
pub mod span;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
