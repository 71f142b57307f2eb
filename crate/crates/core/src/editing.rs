//! Mask-guided two-phase generation.
//!
//! The chain is split at step `k`: the head runs under the target condition
//! from the source latent, the result is blended with a source-side state at
//! step `k` through the pixel mask, and the tail finishes under the target
//! condition with the source noises `eps[1..=k]`.

use rand::Rng;

use crate::condition::Condition;
use crate::error::{param_err, Result};
use crate::maskgen::EditMask;
use crate::sampler::{forward_sample, Denoiser, LatentCode, Sampler, Trajectory};
use crate::tensor::ImageTensor;

/// Where the unmasked part of the step-`k` state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// A fresh draw from `q(x_k | x_0)`.
    Stochastic,
    /// The encoder's own trajectory state `x[k]`.
    #[default]
    Deterministic,
}

impl BlendMode {
    pub fn name(self) -> &'static str {
        match self {
            BlendMode::Stochastic => "stochastic",
            BlendMode::Deterministic => "deterministic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(BlendMode::Stochastic),
            "deterministic" => Ok(BlendMode::Deterministic),
            other => Err(param_err!("unknown blend mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub x0_src: ImageTensor,
    pub c_src: Condition,
    pub c_tgt: Condition,
    /// Pixel-resolution mask (`H x W`), broadcast over channels.
    pub mask: EditMask,
    pub k: usize,
    pub noise_step: usize,
    pub dec_scale: f64,
    pub blend_mode: BlendMode,
}

/// `M * x_k^target + (1 - M) * x_k^source` with a binary per-pixel mask.
pub fn blend(target: &ImageTensor, source: &ImageTensor, mask: &EditMask) -> Result<ImageTensor> {
    source.ensure_shape(target.shape())?;
    if (mask.rows(), mask.cols()) != (target.height(), target.width()) {
        return Err(param_err!(
            "mask {}x{} does not match image {}",
            mask.rows(),
            mask.cols(),
            target.shape()
        ));
    }
    let ch = target.channels();
    let cells = mask.cells();
    let data = target
        .as_slice()
        .iter()
        .zip(source.as_slice())
        .enumerate()
        .map(|(i, (&t, &s))| if cells[i / ch] { t } else { s })
        .collect();
    ImageTensor::new(target.shape(), data)
}

/// Runs the split-chain edit for `req` using the source encoding `z_src`
/// and its forward trajectory, both produced up to `req.noise_step`.
pub fn masked_edit<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    sampler: &Sampler<'_, D>,
    req: &EditRequest,
    z_src: &LatentCode,
    traj: &Trajectory,
    rng: &mut R,
) -> Result<ImageTensor> {
    let steps = sampler.schedule.steps();
    if !(1 <= req.k && req.k <= req.noise_step && req.noise_step <= steps) {
        return Err(param_err!(
            "need 1 <= k ({}) <= noise_step ({}) <= T ({steps})",
            req.k,
            req.noise_step
        ));
    }
    if z_src.steps() != req.noise_step || traj.steps() != req.noise_step {
        return Err(param_err!(
            "source encoding covers {} steps (trajectory {}), request expects {}",
            z_src.steps(),
            traj.steps(),
            req.noise_step
        ));
    }
    req.x0_src.ensure_shape(z_src.x_start().shape())?;

    let xk_target = sampler.decode_head(z_src, &req.c_tgt, req.k, req.dec_scale)?;
    let xk_source = match req.blend_mode {
        BlendMode::Deterministic => traj.state(req.k).clone(),
        BlendMode::Stochastic => forward_sample(&req.x0_src, req.k, sampler.schedule, rng)?,
    };
    let xk = blend(&xk_target, &xk_source, &req.mask)?;
    sampler.decode_tail(&xk, z_src.eps_through(req.k), &req.c_tgt, req.k, req.dec_scale)
}
