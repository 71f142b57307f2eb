//! Reference comparison modes. These are small stand-ins for two published
//! editing approaches and make no fidelity claim.

use dualcycle_core::maskgen::EditMask;
use dualcycle_core::rng::SeededRng;
use dualcycle_core::sampler::forward_sample;
use dualcycle_core::{Condition, Denoiser, ImageTensor, LatentCode, Result, Sampler};

/// Noise the source to `noise_step` with the forward process and decode it
/// under the target condition with fresh noise; nothing is inverted.
pub fn sdedit<D: Denoiser + ?Sized>(
    sampler: &Sampler<'_, D>,
    x0: &ImageTensor,
    c_tgt: &Condition,
    noise_step: usize,
    scale: f64,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    let xt = forward_sample(x0, noise_step, sampler.schedule, rng)?;
    let z = LatentCode::random(x0.shape(), noise_step, rng)?;
    sampler.decode_tail(&xt, z.all_eps(), c_tgt, noise_step, scale)
}

/// Pixel mask from the gap between target- and source-conditioned
/// predictions at the middle step, averaged over `draws` noisings of `x0`.
///
/// The reverse mean is affine in the noise prediction with a per-step
/// coefficient, so contrasting means ranks pixels the same way as
/// contrasting noise predictions. The summed gap is min-max normalised and
/// cut at one half; a flat gap gives the empty mask.
pub fn diffedit_mask<D: Denoiser + ?Sized>(
    sampler: &Sampler<'_, D>,
    x0: &ImageTensor,
    c_src: &Condition,
    c_tgt: &Condition,
    draws: usize,
    rng: &mut SeededRng,
) -> Result<EditMask> {
    let t = (sampler.schedule.steps() / 2).max(1);
    let ch = x0.channels();
    let mut gap = vec![0.0; x0.shape().pixels()];
    for _ in 0..draws {
        let xt = forward_sample(x0, t, sampler.schedule, rng)?;
        let tgt = sampler.guided_mean(&xt, t, c_tgt, 1.0)?;
        let src = sampler.guided_mean(&xt, t, c_src, 1.0)?;
        for (i, (a, b)) in tgt.as_slice().iter().zip(src.as_slice()).enumerate() {
            gap[i / ch] += (a - b).abs();
        }
    }
    let lo = gap.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gap.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cells = if hi - lo <= 1e-12 {
        vec![false; gap.len()]
    } else {
        gap.iter().map(|g| (g - lo) / (hi - lo) > 0.5).collect()
    };
    EditMask::new(x0.height(), x0.width(), cells)
}
