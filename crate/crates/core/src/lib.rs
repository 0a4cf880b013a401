//! Low-light enhancement through a learned atmospheric component.
//!
//! A low-light image `L` is inverted into a haze-like image `I' = 1 - L`,
//! a compact convolutional network estimates the atmospheric field `h`, the
//! recovery `B = h (I' - 1) + c` is solved in closed form, and the result is
//! inverted back. Training combines four losses and a self-training
//! curriculum gated by a no-reference quality score.

pub mod error;
pub mod fixtures;
pub mod haze;
pub mod image;
pub mod iqa;
pub mod losses;
pub mod network;
pub mod seeds;
pub mod ssim;
pub mod training;

pub use error::{Error, Result};
