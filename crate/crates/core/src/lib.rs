//! Dual-cycle diffusion editing over images held in plain `f64` buffers.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs plus an explicit random stream, so the companion
//! `dualcycle` crate can fan trials out across threads without coordination.
//!
//! Layout:
//! - [`schedule`], [`tensor`], [`sampler`]: noise schedules, forward
//!   diffusion, the eta-parameterised reverse chain, latent codes and the
//!   inverting encoder.
//! - [`world`]: a synthetic attribute world, a Gaussian mixture over its
//!   rendered scenes with injectable attribute couplings, and the exact
//!   posterior denoiser for that mixture.
//! - [`cycles`]: structural-consistency and bias-elimination cycles.
//! - [`maskgen`]: grid features, cosine similarity, binarisation, quadrant
//!   refinement, averaging and resizing of edit masks.
//! - [`editing`]: mask-guided two-phase generation.
//! - [`metrics`]: PSNR, SSIM and mixture-based alignment scores.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod condition;
pub mod cycles;
pub mod editing;
pub mod error;
pub mod maskgen;
mod math;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod world;

pub use condition::Condition;
pub use error::{Error, Result};
pub use sampler::{Denoiser, LatentCode, Sampler, Trajectory};
pub use schedule::NoiseSchedule;
pub use tensor::{ImageTensor, Shape};
