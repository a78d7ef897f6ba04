pub mod audio;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod generative;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod train;
pub mod unet;
pub mod visual;

pub use error::{Error, Result};
pub use grid::Grid;
