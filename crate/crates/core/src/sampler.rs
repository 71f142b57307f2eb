//! Forward diffusion, the stochastic reverse chain and its inverse.
//!
//! A [`LatentCode`] holds a starting state plus one noise image per reverse
//! step. Decoding consumes the noises from the highest step downwards; the
//! encoder samples a forward trajectory and solves every reverse step for the
//! noise that reproduces it, so decoding an encoded image under the same
//! condition and guidance returns the image.

use alloc::vec::Vec;

use rand::Rng;

use crate::condition::Condition;
use crate::error::{param_err, Error, Result};
use crate::math::sqrt;
use crate::rng::standard_normal;
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

/// Largest residual tolerated at a zero-sigma step while encoding.
pub const ZERO_SIGMA_TOLERANCE: f64 = 1e-6;

/// A reverse-mean estimator `mu(x_t, c, t)`.
///
/// Implementations must return the mean of `x_{t-1}` for the same schedule
/// the [`Sampler`] is driven with.
pub trait Denoiser {
    fn reverse_mean(&self, xt: &ImageTensor, t: usize, cond: &Condition) -> Result<ImageTensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn reverse_mean(&self, xt: &ImageTensor, t: usize, cond: &Condition) -> Result<ImageTensor> {
        (**self).reverse_mean(xt, t, cond)
    }
}

/// States `x[0..=n]` from the clean image to the most-noised one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<ImageTensor>,
}

impl Trajectory {
    /// Highest step index stored.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state(&self, t: usize) -> &ImageTensor {
        &self.states[t]
    }

    pub fn states(&self) -> &[ImageTensor] {
        &self.states
    }
}

/// `x_start` followed by `eps[1..=n]`. When `n = T` this is the full code
/// `x_T ⊕ eps_{1:T}`; partial codes start at an intermediate step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    x_start: ImageTensor,
    /// `eps[t - 1]` is the noise consumed by reverse step `t`.
    eps: Vec<ImageTensor>,
}

impl LatentCode {
    pub fn new(x_start: ImageTensor, eps: Vec<ImageTensor>) -> Result<Self> {
        if eps.is_empty() {
            return Err(param_err!("a latent code needs at least one noise entry"));
        }
        for e in &eps {
            e.ensure_shape(x_start.shape())?;
        }
        Ok(Self { x_start, eps })
    }

    /// Standard-normal start state and noises.
    pub fn random<R: Rng + ?Sized>(
        shape: crate::tensor::Shape,
        steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let x_start = standard_normal(shape, rng);
        let eps = (0..steps).map(|_| standard_normal(shape, rng)).collect();
        Self::new(x_start, eps)
    }

    /// Step the chain starts from (number of noise entries).
    pub fn steps(&self) -> usize {
        self.eps.len()
    }

    pub fn x_start(&self) -> &ImageTensor {
        &self.x_start
    }

    /// Noise for reverse step `t` (1-based).
    pub fn eps(&self, t: usize) -> &ImageTensor {
        &self.eps[t - 1]
    }

    /// `eps[1..=k]`, the noises a tail decode from step `k` consumes.
    pub fn eps_through(&self, k: usize) -> &[ImageTensor] {
        &self.eps[..k]
    }

    pub fn all_eps(&self) -> &[ImageTensor] {
        &self.eps
    }
}

/// `sqrt(a[t]) x0 + sqrt(1 - a[t]) n` with `n` standard normal.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<ImageTensor> {
    sched.check_step(t)?;
    let a = sched.alpha_bar(t);
    let noise = standard_normal(x0.shape(), rng);
    x0.lin_comb(sqrt(a), &noise, sqrt(1.0 - a))
}

/// Samples `x[1..=T]` step by step from `q(x_t | x_{t-1})`.
pub fn forward_trajectory<R: Rng + ?Sized>(
    x0: &ImageTensor,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    forward_trajectory_to(x0, sched.steps(), sched, rng)
}

/// As [`forward_trajectory`], stopping at step `steps`.
pub fn forward_trajectory_to<R: Rng + ?Sized>(
    x0: &ImageTensor,
    steps: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    sched.check_step(steps)?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for t in 1..=steps {
        let beta = sched.beta(t);
        let noise = standard_normal(x0.shape(), rng);
        let next = states[t - 1].lin_comb(sqrt(1.0 - beta), &noise, sqrt(beta))?;
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// `x_{t-1} = mean + sigma[t] * eps_t`; a zero sigma injects nothing.
pub fn reverse_step(
    xt: &ImageTensor,
    t: usize,
    mean: &ImageTensor,
    eps_t: &ImageTensor,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    sched.check_step(t)?;
    mean.ensure_shape(xt.shape())?;
    eps_t.ensure_shape(xt.shape())?;
    let sigma = sched.sigma(t);
    if sigma == 0.0 {
        return Ok(mean.clone());
    }
    mean.lin_comb(1.0, eps_t, sigma)
}

/// A denoiser bound to the schedule it was built for.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a, D: ?Sized> {
    pub denoiser: &'a D,
    pub schedule: &'a NoiseSchedule,
}

impl<'a, D: Denoiser + ?Sized> Sampler<'a, D> {
    pub fn new(denoiser: &'a D, schedule: &'a NoiseSchedule) -> Self {
        Self { denoiser, schedule }
    }

    /// Classifier-free guided reverse mean.
    ///
    /// Both denoiser means are converted to the noise predictions they imply,
    /// combined as `eps_u + scale * (eps_c - eps_u)`, and mapped back to a
    /// reverse mean. Scale 1 and the unconditional query short-circuit to the
    /// conditional mean; scale 0 to the unconditional one.
    pub fn guided_mean(
        &self,
        xt: &ImageTensor,
        t: usize,
        cond: &Condition,
        scale: f64,
    ) -> Result<ImageTensor> {
        self.schedule.check_step(t)?;
        if scale == 1.0 || cond.is_unconditional() {
            return self.denoiser.reverse_mean(xt, t, cond);
        }
        let uncond = self.denoiser.reverse_mean(xt, t, &Condition::unconditional())?;
        if scale == 0.0 {
            return Ok(uncond);
        }
        let cond_mean = self.denoiser.reverse_mean(xt, t, cond)?;
        uncond.ensure_shape(xt.shape())?;
        cond_mean.ensure_shape(xt.shape())?;

        let (xt_coef, eps_coef) = self.schedule.eps_form(t);
        let data = xt
            .as_slice()
            .iter()
            .zip(uncond.as_slice())
            .zip(cond_mean.as_slice())
            .map(|((&x, &mu_u), &mu_c)| {
                let eps_u = (mu_u - xt_coef * x) / eps_coef;
                let eps_c = (mu_c - xt_coef * x) / eps_coef;
                let eps = eps_u + scale * (eps_c - eps_u);
                xt_coef * x + eps_coef * eps
            })
            .collect();
        Ok(ImageTensor::from_parts(xt.shape(), data))
    }

    fn step(&self, x: &ImageTensor, t: usize, eps: &ImageTensor, cond: &Condition, scale: f64) -> Result<ImageTensor> {
        let mean = self.guided_mean(x, t, cond, scale)?;
        reverse_step(x, t, &mean, eps, self.schedule)
    }

    /// The full map `G(z, c)`; `z` must carry exactly `T` noises.
    pub fn decode(&self, z: &LatentCode, cond: &Condition, scale: f64) -> Result<ImageTensor> {
        if z.steps() != self.schedule.steps() {
            return Err(param_err!(
                "latent code has {} noise entries, schedule has {} steps",
                z.steps(),
                self.schedule.steps()
            ));
        }
        self.decode_tail(z.x_start(), z.all_eps(), cond, z.steps(), scale)
    }

    /// Runs steps `n..=k+1` of the chain (`n = z.steps()`) and returns `x_k`.
    ///
    /// Together with [`Self::decode_tail`] over `eps[1..=k]` this partitions
    /// the chain without overlap.
    pub fn decode_head(
        &self,
        z: &LatentCode,
        cond: &Condition,
        k: usize,
        scale: f64,
    ) -> Result<ImageTensor> {
        if k == 0 || k > z.steps() {
            return Err(param_err!("split step {k} outside 1..={}", z.steps()));
        }
        self.schedule.check_step(z.steps())?;
        let mut x = z.x_start().clone();
        for t in (k + 1..=z.steps()).rev() {
            x = self.step(&x, t, z.eps(t), cond, scale)?;
        }
        Ok(x)
    }

    /// Runs steps `k..=1` from `xk` with `eps_1k[t - 1]` at step `t`.
    pub fn decode_tail(
        &self,
        xk: &ImageTensor,
        eps_1k: &[ImageTensor],
        cond: &Condition,
        k: usize,
        scale: f64,
    ) -> Result<ImageTensor> {
        if eps_1k.len() != k {
            return Err(param_err!("tail from step {k} needs {k} noises, got {}", eps_1k.len()));
        }
        self.schedule.check_step(k)?;
        let mut x = xk.clone();
        for t in (1..=k).rev() {
            x = self.step(&x, t, &eps_1k[t - 1], cond, scale)?;
        }
        Ok(x)
    }

    /// Encodes `x0` over the whole chain.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        x0: &ImageTensor,
        cond: &Condition,
        scale: f64,
        rng: &mut R,
    ) -> Result<(LatentCode, Trajectory)> {
        self.encode_to(x0, cond, scale, self.schedule.steps(), rng)
    }

    /// Encodes `x0` up to step `steps`: samples `x[1..=steps]` and solves
    /// `eps_t = (x[t-1] - mean(x[t])) / sigma[t]` for each step.
    pub fn encode_to<R: Rng + ?Sized>(
        &self,
        x0: &ImageTensor,
        cond: &Condition,
        scale: f64,
        steps: usize,
        rng: &mut R,
    ) -> Result<(LatentCode, Trajectory)> {
        let traj = forward_trajectory_to(x0, steps, self.schedule, rng)?;
        let mut eps = Vec::with_capacity(steps);
        for t in 1..=steps {
            let xt = traj.state(t);
            let prev = traj.state(t - 1);
            let mean = self.guided_mean(xt, t, cond, scale)?;
            let sigma = self.schedule.sigma(t);
            let e = if sigma == 0.0 {
                let residual = prev.max_abs_diff(&mean)?;
                if residual > ZERO_SIGMA_TOLERANCE {
                    return Err(Error::EncodeSingularity { step: t, residual });
                }
                ImageTensor::zeros(x0.shape())
            } else {
                prev.lin_comb(1.0 / sigma, &mean, -1.0 / sigma)?
            };
            eps.push(e);
        }
        let z = LatentCode::new(traj.state(steps).clone(), eps)?;
        Ok((z, traj))
    }
}
