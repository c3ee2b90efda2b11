pub mod data;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod nn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
