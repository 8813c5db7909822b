//! Gait recognition from per-cycle Koopman operators learned in the embedding
//! space of an invertible coupling coder.

pub mod classify;
pub mod coder;
pub mod dataio;
pub mod error;
pub mod flops;
pub mod koopman;
pub mod optim;
pub mod ovs;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
