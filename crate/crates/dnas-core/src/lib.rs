//! Entropy-regularized differentiable architecture search over a
//! hardware-aware U-Net search space for image denoising, at desk scale.
//!
//! The crate is organised as:
//! - [`tensor`]: tape-based reverse-mode autodiff engine;
//! - [`params`]: named parameter storage, Adam, and the binary container;
//! - [`blocks`]: the base restoration block, its three cheaper alternatives,
//!   conv/batch-norm folding and U-Net assembly;
//! - [`search`]: the supernet, composite loss, joint training, architecture
//!   derivation and fine-tuning;
//! - [`cost`]: analytic MAC/parameter counting, penalty tables and Pareto
//!   front computation;
//! - [`data`]: synthetic clean/noisy datasets plus PSNR/SSIM metrics.

pub mod blocks;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor};
