//! Structural-consistency and bias-elimination cycles.

use rand::Rng;

use crate::condition::Condition;
use crate::error::Result;
use crate::sampler::{Denoiser, LatentCode, Sampler, Trajectory};
use crate::tensor::ImageTensor;

/// Guidance and partial-noising settings shared by both paths of a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleParams {
    pub enc_scale: f64,
    pub dec_scale: f64,
    /// Step the encoder stops at and the decoder starts from.
    pub noise_step: usize,
}

impl CycleParams {
    pub fn new(dec_scale: f64, noise_step: usize) -> Self {
        Self { enc_scale: 1.0, dec_scale, noise_step }
    }
}

/// Output of [`sc_cycle`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScOutput {
    pub x0_target: ImageTensor,
    pub z_source: LatentCode,
    pub trajectory: Trajectory,
}

/// Output of [`be_cycle`].
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    pub x0_target: ImageTensor,
    pub x0_inv: ImageTensor,
    pub z_source: LatentCode,
    pub source_trajectory: Trajectory,
    pub z_target: LatentCode,
}

/// Encode under the source condition up to `noise_step`, decode the same
/// code under the target condition.
pub fn sc_cycle<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    sampler: &Sampler<'_, D>,
    x0_src: &ImageTensor,
    c_src: &Condition,
    c_tgt: &Condition,
    params: CycleParams,
    rng: &mut R,
) -> Result<ScOutput> {
    let (z, traj) = sampler.encode_to(x0_src, c_src, params.enc_scale, params.noise_step, rng)?;
    let x0_target = sampler.decode_tail(z.x_start(), z.all_eps(), c_tgt, z.steps(), params.dec_scale)?;
    Ok(ScOutput { x0_target, z_source: z, trajectory: traj })
}

/// Forward path ([`sc_cycle`]) followed by the inverted path, which encodes
/// the edit under the target condition and decodes it under the source
/// condition with the same settings.
pub fn be_cycle<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    sampler: &Sampler<'_, D>,
    x0_src: &ImageTensor,
    c_src: &Condition,
    c_tgt: &Condition,
    params: CycleParams,
    rng: &mut R,
) -> Result<CycleOutput> {
    let fwd = sc_cycle(sampler, x0_src, c_src, c_tgt, params, rng)?;
    let inv = sc_cycle(sampler, &fwd.x0_target, c_tgt, c_src, params, rng)?;
    Ok(CycleOutput {
        x0_target: fwd.x0_target,
        x0_inv: inv.x0_target,
        z_source: fwd.z_source,
        source_trajectory: fwd.trajectory,
        z_target: inv.z_source,
    })
}
