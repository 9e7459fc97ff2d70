//! HDR radiance fields trained from multi-exposure LDR views.
//!
//! Two coupled implicit functions are optimized end to end: a radiance field
//! that predicts log-radiance and density along camera rays, and a per-channel
//! tone mapper that turns log-exposure into LDR color. Once trained, the
//! field renders novel HDR views directly and novel LDR views at any exposure
//! time through the tone mapper.
//!
//! Crate layout:
//! - [`autodiff`]: define-by-run reverse-mode tape, Adam, finite-difference checks
//! - [`encoding`]: positional encoding of sample positions and directions
//! - [`model`]: radiance field, tone mapper, checkpoint container
//! - [`render`]: rays, sampling, volume compositing, image rendering
//! - [`train`]: losses, learning-rate schedule, optimization loop
//! - [`synth`]: analytic HDR scenes, a parametric camera response, dataset emission
//! - [`calib`]: classical least-squares response recovery from exposure stacks
//! - [`metrics`]: PSNR, SSIM, mu-law tone mapping, scale alignment, evaluation
//! - [`io`]: PNG/PFM images, dataset metadata, atomic writes
//! - [`cli`]: the `hdrf` command-line surface

pub mod autodiff;
pub mod calib;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod render;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
