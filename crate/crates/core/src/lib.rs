//! Semi-supervised relation extraction with a prediction module and a
//! retrieval module that select pseudo-labels for each other.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod grid;
pub mod predictor;
pub mod retriever;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
