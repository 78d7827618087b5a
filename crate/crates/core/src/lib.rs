//! Invertible camera ISP model: six parametric stages between RAW and sRGB,
//! learnable CCM and white-balance dictionaries, and an end-to-end trainer.

pub mod cli;
pub mod dict;
pub mod error;
pub mod fsutil;
pub mod imagecore;
pub mod nets;
pub mod pipeline;
pub mod stages;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
