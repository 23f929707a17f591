//! Memorization dynamics laboratory for classifier-free guided diffusion.
//!
//! The crate bundles the denoising machinery (forward noising, x̂₀ recovery,
//! DDIM/DDPM steps, guidance), a tiny trainable conditional noise predictor,
//! closed-form idealizations of a memorizing denoiser, and the trajectory
//! diagnostics used to tell memorized generations from normal ones.

mod binio;
pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod schedule;
pub mod toy_model;
pub mod vector;

pub use error::{Error, Result};
pub use schedule::{InferenceGrid, Schedule};
pub use vector::Vector;
