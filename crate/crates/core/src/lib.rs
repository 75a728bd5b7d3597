//! Emotion recognition in conversations with a shift-aware recurrent cell.

pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod shift;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
