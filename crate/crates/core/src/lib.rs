//! Text-aware learned image compression.
//!
//! The crate provides a text logit loss that compares recognizer logits of
//! original and reconstructed text regions, a training harness adding it to
//! a rate-distortion objective, and an evaluation suite producing
//! CER/WER/PSNR-versus-rate curves and Bjontegaard deltas.

pub mod autodiff;
pub mod cli;
pub mod compress;
pub mod data;
pub mod error;
pub mod font;
pub mod metrics;
pub mod plot;
pub mod textloss;
pub mod textpipe;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
