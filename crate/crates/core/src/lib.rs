//! Watermarked diffusion models on small synthetic and image datasets.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod prove;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Result, WdmError};
