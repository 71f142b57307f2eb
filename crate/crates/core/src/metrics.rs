//! Image-quality and condition-alignment scores.
//!
//! `align` and `d_align` are mixture-likelihood stand-ins for text/image
//! embedding scores; they are not comparable to CLIP-based numbers.

use alloc::vec::Vec;

use crate::condition::Condition;
use crate::error::{param_err, Result};
use crate::math::{log10, sqrt};
use crate::tensor::ImageTensor;
use crate::world::{region_mask, MixtureWorld, Region};

/// Images live in `[-1, 1]`.
pub const PEAK: f64 = 2.0;
/// Reported PSNR never exceeds this (identical images included).
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * log10(PEAK * PEAK / mse)).min(PSNR_CAP)
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    b.ensure_shape(a.shape())?;
    let n = a.as_slice().len() as f64;
    let mse = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(psnr_from_mse(mse))
}

/// PSNR over the pixels where `region` holds (all channels). An empty region
/// scores the cap.
pub fn psnr_masked(a: &ImageTensor, b: &ImageTensor, region: &[bool]) -> Result<f64> {
    b.ensure_shape(a.shape())?;
    if region.len() != a.shape().pixels() {
        return Err(param_err!("region has {} pixels, image has {}", region.len(), a.shape().pixels()));
    }
    let ch = a.channels();
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if region[i / ch] {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok(if n == 0 { PSNR_CAP } else { psnr_from_mse(sum / n as f64) })
}

fn window_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..=len - SSIM_WINDOW).step_by(SSIM_STRIDE)
}

/// Mean SSIM over 8x8 windows at stride 4, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    b.ensure_shape(a.shape())?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(param_err!("image {} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", a.shape()));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for c in 0..a.channels() {
        for r0 in window_starts(a.height()) {
            for c0 in window_starts(a.width()) {
                let pixels = || {
                    (r0..r0 + SSIM_WINDOW)
                        .flat_map(move |i| (c0..c0 + SSIM_WINDOW).map(move |j| (i, j)))
                };
                let mu_a = pixels().map(|(i, j)| a.get(i, j, c)).sum::<f64>() / n;
                let mu_b = pixels().map(|(i, j)| b.get(i, j, c)).sum::<f64>() / n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for (i, j) in pixels() {
                    let da = a.get(i, j, c) - mu_a;
                    let db = b.get(i, j, c) - mu_b;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
                let (va, vb, cov) = (va / n, vb / n, cov / n);
                let num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2);
                let den = (mu_a * mu_a + mu_b * mu_b + C1) * (va + vb + C2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Condition log-likelihood per pixel.
pub fn align(x: &ImageTensor, cond: &Condition, world: &MixtureWorld) -> Result<f64> {
    Ok(world.log_likelihood(x, cond)? / x.shape().pixels() as f64)
}

/// `(align, d_align)`: alignment of `x` with the target condition, and how
/// much more `x` favours target over source than `x_src` does.
pub fn alignment_scores(
    x: &ImageTensor,
    x_src: &ImageTensor,
    c_src: &Condition,
    c_tgt: &Condition,
    world: &MixtureWorld,
) -> Result<(f64, f64)> {
    let a_tgt = align(x, c_tgt, world)?;
    let a_src = align(x, c_src, world)?;
    let s_tgt = align(x_src, c_tgt, world)?;
    let s_src = align(x_src, c_src, world)?;
    Ok((a_tgt, (a_tgt - a_src) - (s_tgt - s_src)))
}

fn region_l2(a: &ImageTensor, b: &ImageTensor, region: &[bool]) -> f64 {
    let ch = a.channels();
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .enumerate()
        .filter(|(i, _)| region[i / ch])
        .map(|(_, (x, y))| (x - y) * (x - y))
        .sum();
    sqrt(sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub region: Region,
    /// L2 distance to the source image inside the region.
    pub to_source: f64,
    /// L2 distance to the rendered target scene inside the region.
    pub to_template: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub psnr: f64,
    pub ssim: f64,
    pub align: f64,
    pub d_align: f64,
    /// PSNR against the source over pixels outside the edit region.
    pub psnr_outside: f64,
    pub region_scores: Vec<RegionScore>,
}

impl ScoreReport {
    pub fn region(&self, region: Region) -> Option<&RegionScore> {
        self.region_scores.iter().find(|r| r.region == region)
    }
}

/// Scores an edit against its source. `template` is the rendered target
/// scene; `edit_region` marks pixels the edit is supposed to change.
pub fn score(
    x: &ImageTensor,
    x_src: &ImageTensor,
    template: &ImageTensor,
    c_src: &Condition,
    c_tgt: &Condition,
    world: &MixtureWorld,
    edit_region: &[bool],
) -> Result<ScoreReport> {
    x_src.ensure_shape(x.shape())?;
    template.ensure_shape(x.shape())?;
    let (align, d_align) = alignment_scores(x, x_src, c_src, c_tgt, world)?;
    let outside: Vec<bool> = edit_region.iter().map(|&e| !e).collect();
    let region_scores = Region::ALL
        .iter()
        .map(|&region| {
            let m = region_mask(region, x.shape());
            RegionScore { region, to_source: region_l2(x, x_src, &m), to_template: region_l2(x, template, &m) }
        })
        .collect();
    Ok(ScoreReport {
        psnr: psnr(x, x_src)?,
        ssim: ssim(x, x_src)?,
        align,
        d_align,
        psnr_outside: psnr_masked(x, x_src, &outside)?,
        region_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn ramp() -> ImageTensor {
        ImageTensor::from_fn(Shape::new(16, 16, 3), |i, j, c| {
            ((i * 7 + j * 3 + c * 5) % 11) as f64 / 11.0 * 1.6 - 0.8
        })
    }

    #[test]
    fn psnr_values() {
        let x = ramp();
        assert_eq!(psnr(&x, &x).unwrap(), 99.0);
        let y = x.map(|v| v + 0.2);
        let p = psnr(&x, &y).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(p, psnr(&y, &x).unwrap());
    }

    #[test]
    fn ssim_values() {
        let x = ramp();
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let mean = x.as_slice().iter().sum::<f64>() / x.as_slice().len() as f64;
        let centred = x.map(|v| v - mean);
        assert!(ssim(&centred, &centred.map(|v| -v)).unwrap() < 0.0);
        // Constants: only the luminance term survives.
        let a = ImageTensor::zeros(Shape::new(8, 8, 1));
        let b = ImageTensor::filled(Shape::new(8, 8, 1), 0.5);
        let expect = C1 / (0.25 + C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-15);
        assert!(ssim(&ImageTensor::zeros(Shape::new(7, 8, 1)), &ImageTensor::zeros(Shape::new(7, 8, 1))).is_err());
    }

    #[test]
    fn masked_psnr_ignores_outside() {
        let x = ImageTensor::zeros(Shape::new(2, 2, 1));
        let y = ImageTensor::new(Shape::new(2, 2, 1), alloc::vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(psnr_masked(&x, &y, &[true, true, true, false]).unwrap(), 99.0);
        assert!(psnr_masked(&x, &y, &[true; 4]).unwrap() < 99.0);
    }
}
