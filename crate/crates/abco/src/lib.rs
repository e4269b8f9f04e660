pub mod autodiff;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod experts;
pub mod nn;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};
