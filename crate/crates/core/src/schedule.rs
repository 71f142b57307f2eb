//! Linear-beta noise schedules and the eta-parameterised reverse coefficients.

use alloc::vec::Vec;

use crate::error::{param_err, Result};
use crate::math::sqrt;

/// Step count and beta range used throughout the experiments.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;
pub const DEFAULT_ETA: f64 = 0.1;

/// Step indices run `1..=T`; index 0 of `alpha_bar` is the clean image.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    eta: f64,
    /// `betas[t]` for `t in 1..=T`; slot 0 is unused and holds 0.
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// `sigma[t]` for `t in 1..=T`; slot 0 holds 0.
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly spaced over `[beta_min, beta_max]`.
    ///
    /// For `t >= 2` the reverse standard deviation is the usual
    /// `eta * sqrt((1 - a[t-1]) / (1 - a[t])) * sqrt(1 - a[t] / a[t-1])`.
    /// At `t = 1` that expression is identically zero because `a[0] = 1`,
    /// so the last step uses `eta * sqrt(beta[1])` instead. This keeps the
    /// final reverse step stochastic whenever `eta > 0`, which the encoder
    /// needs in order to absorb the last residual.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64, eta: f64) -> Result<Self> {
        if steps == 0 {
            return Err(param_err!("step count must be at least 1"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(param_err!(
                "beta range must satisfy 0 < min <= max < 1, got [{beta_min}, {beta_max}]"
            ));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(param_err!("eta must lie in [0, 1], got {eta}"));
        }

        let mut betas = Vec::with_capacity(steps + 1);
        betas.push(0.0);
        for i in 0..steps {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            betas.push(beta_min + frac * (beta_max - beta_min));
        }

        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=steps {
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - betas[t]));
        }

        let mut sigma = Vec::with_capacity(steps + 1);
        sigma.push(0.0);
        for t in 1..=steps {
            let s = if t == 1 {
                eta * sqrt(betas[1])
            } else {
                let (prev, cur) = (alpha_bar[t - 1], alpha_bar[t]);
                eta * sqrt((1.0 - prev) / (1.0 - cur)) * sqrt(1.0 - cur / prev)
            };
            sigma.push(s);
        }

        Ok(Self { steps, eta, betas, alpha_bar, sigma })
    }

    /// `T = 100`, betas in `[1e-4, 0.02]`, `eta = 0.1`.
    pub fn standard() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX, DEFAULT_ETA)
            .expect("default schedule parameters are valid")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps).contains(&t) {
            Ok(())
        } else {
            Err(param_err!("step {t} outside 1..={}", self.steps))
        }
    }

    /// Coefficients of the reverse mean written in terms of a clean-image
    /// estimate: `mean = x0_coef * x0_hat + eps_coef * eps_hat`, with
    /// `eps_hat = (x_t - sqrt(a[t]) x0_hat) / sqrt(1 - a[t])`.
    pub(crate) fn x0_form(&self, t: usize) -> (f64, f64) {
        let prev = self.alpha_bar[t - 1];
        let s = self.sigma[t];
        let dir = sqrt((1.0 - prev - s * s).max(0.0));
        (sqrt(prev), dir)
    }

    /// Coefficients of the reverse mean as an affine function of a noise
    /// prediction: `mean = xt_coef * x_t + eps_coef * eps_hat`.
    ///
    /// `eps_coef` is strictly negative for every valid schedule, so the map
    /// can always be inverted.
    pub(crate) fn eps_form(&self, t: usize) -> (f64, f64) {
        let (x0_coef, dir) = self.x0_form(t);
        let cur = self.alpha_bar[t];
        let xt_coef = x0_coef / sqrt(cur);
        let eps_coef = dir - x0_coef * sqrt(1.0 - cur) / sqrt(cur);
        (xt_coef, eps_coef)
    }
}
