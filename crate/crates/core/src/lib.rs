//! Path-level supervision for knowledge-graph question answering.

pub mod artifact;
pub mod checkpoint;
pub mod config;
pub mod embedding;
pub mod error;
pub mod estimator;
pub mod fixtures;
pub mod eval;
pub mod generator;
pub mod kg;
pub mod optim;
pub mod paths;
pub mod pipeline;
pub mod prompt;
pub mod question;
pub mod reasoner;
pub mod seed;
pub mod supervision;
pub mod synthetic;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
