//! Face retouching reversal, end to end.
//!
//! The pipeline works in two stages: a conditional denoising-diffusion model
//! restores the coarse structure of the un-retouched face at low resolution,
//! and a hybrid-attention super-resolution generator adds high-resolution
//! detail on top. This crate holds everything below the command line:
//!
//! - [`tensor`]: a small reverse-mode autodiff engine over `ndarray` (f64).
//! - [`nn`]: parameter stores, initializers, and the Adam optimizer.
//! - [`diffusion`]: noise schedules, forward/posterior algebra, training
//!   steps, and the conditioned sampling chain.
//! - [`denoiser`]: the trainable noise predictor (U-shaped encoder/decoder
//!   conditioned on the retouched image and the timestep).
//! - [`sr`]: the hybrid-attention super-resolution generator and backend
//!   registry.
//! - [`metrics`]: PSNR / SSIM / embedding similarity and density curves.
//! - [`dataset`]: paired-dataset construction (simulator or HTTP backend),
//!   manifests, splits, and resolution management.
//! - [`checkpoint`]: the on-disk archive format shared by both models.

pub mod checkpoint;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod image_tensor;
pub mod metrics;
pub mod nn;
pub mod sr;
pub mod tensor;

pub use image_tensor::ImageTensor;
