//! Temporally-aware masked-autoencoder pretraining for short video clips,
//! with a CLS-token classifier for reduced ejection fraction.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod masking;
pub mod model;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
