//! Sentence encoder for natural language inference: stacked bidirectional
//! LSTMs with shortcut or residual connections between layers, row-max
//! pooling into a fixed-width sentence vector, and a feature-matching MLP
//! classifier over premise/hypothesis pairs. Includes a small reverse-mode
//! autodiff engine, Adam training with deterministic data pipelines, a
//! binary checkpoint format, and finite-difference gradient verification.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::NliModel;
pub use scalar::Scalar;
