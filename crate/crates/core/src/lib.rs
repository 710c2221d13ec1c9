//! Confidence-guided conditional latent diffusion for SAR-to-EO image
//! translation, self-contained at desk scale.
//!
//! The crate provides:
//! - a minimal dense-tensor library with reverse-mode autodiff ([`tensor`]);
//! - the diffusion noise schedule, forward noising, and deterministic
//!   reverse updates ([`diffusion`]);
//! - a small convolutional VAE shared by both modalities ([`vae`]);
//! - the conditional denoising U-Net with a confidence head ([`denoiser`]);
//! - the confidence-weighted training loss ([`loss`]);
//! - a procedural paired SAR/EO scene generator ([`synth`]);
//! - the training loop ([`trainer`]), the sampler ([`sampler`]), and
//!   reference-based image metrics ([`metrics`]).

pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

pub mod diffusion;
pub mod image_io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod ptf;
pub mod synth;
pub mod vae;
