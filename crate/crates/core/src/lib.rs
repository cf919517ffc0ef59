pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nhop;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
