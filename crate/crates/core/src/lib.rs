//! Desk-scale pipeline for optical-micrograph enhancement and particle size
//! analysis: a U-Net translator GAN, an ESRGAN-style super-resolver, a dense
//! circle detector, and the evaluation stack (PSNR/SSIM, density & coverage,
//! ISJ kernel density estimates).
//!
//! Everything runs on the CPU on top of a small reverse-mode autodiff engine
//! ([`tensor`]). Networks are plain parameter stacks ([`nn::LayerStack`])
//! serialized through a checksummed binary checkpoint format ([`checkpoint`]).
//!
//! Error conventions: shape and geometry violations inside the numeric core
//! are programmer errors and panic with a message; anything driven by user
//! data (files, formats, degenerate inputs) returns [`Error`].

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod image_io;
pub mod loss;
pub mod nn;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod registration;
pub mod rng;
pub mod srpsa;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
