#![allow(dead_code)]

use dualcycle_core::rng::{seeded, standard_normal};
use dualcycle_core::world::{
    build_world, AttributeDef, Component, Coupling, MixtureWorld, Vocabulary, DEFAULT_SHAPE, DEFAULT_STD,
};
use dualcycle_core::{Condition, ImageTensor, NoiseSchedule, Shape};
use rand::Rng;

/// Mixture with one component per entry of `means`, tagged `k=0`, `k=1`, ...
pub fn tiny_world(shape: Shape, means: &[Vec<f64>], priors: &[f64], std: f64) -> MixtureWorld {
    let values: Vec<String> = (0..means.len()).map(|i| i.to_string()).collect();
    let vocab = Vocabulary::new(vec![AttributeDef { name: "k".into(), values: values.clone() }]).unwrap();
    let components = means
        .iter()
        .zip(priors)
        .zip(&values)
        .map(|((m, &p), v)| Component {
            attributes: Condition::from_pairs([("k", v.as_str())]).unwrap(),
            prior: p,
            mean: ImageTensor::new(shape, m.clone()).unwrap(),
        })
        .collect();
    MixtureWorld::from_components(vocab, components, std).unwrap()
}

pub fn scarf_world(strength: f64) -> MixtureWorld {
    build_world(
        Vocabulary::standard(),
        vec![Coupling::new(("accessory", "scarf"), ("ears", "folded"), strength)],
        DEFAULT_STD,
        DEFAULT_SHAPE,
    )
    .unwrap()
}

pub fn cond(text: &str) -> Condition {
    Condition::parse(text).unwrap()
}

/// `E[x0 | xt]` by trapezoidal quadrature over a uniform grid of width
/// `std / 8` covering every component mean by 12 standard deviations.
/// The integrand is `sum_k w_k N(x0; mu_k, s^2) * N(xt; sqrt(a) x0, 1 - a)`,
/// evaluated in log space and shifted by its maximum. Supports 1 or 2
/// scalars and up to three components.
pub fn quadrature_posterior_mean(means: &[Vec<f64>], weights: &[f64], std: f64, xt: &[f64], alpha_bar: f64) -> Vec<f64> {
    let dims = xt.len();
    assert!((dims == 1 || dims == 2) && means.len() <= 3);
    let h = std / 8.0;
    // When the likelihood is the narrower factor the posterior can sit near
    // `xt / sqrt(a)` instead of near the means.
    let lik_std = ((1.0 - alpha_bar) / alpha_bar).sqrt();
    let axis = |d: usize| -> Vec<f64> {
        let mut lo = means.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min) - 12.0 * std;
        let mut hi = means.iter().map(|m| m[d]).fold(f64::NEG_INFINITY, f64::max) + 12.0 * std;
        if lik_std < 4.0 * std {
            let centre = xt[d] / alpha_bar.sqrt();
            lo = lo.min(centre - 12.0 * lik_std);
            hi = hi.max(centre + 12.0 * lik_std);
        }
        let n = ((hi - lo) / h).ceil() as usize;
        (0..=n).map(|i| lo + i as f64 * h).collect()
    };
    let axes: Vec<Vec<f64>> = (0..dims).map(axis).collect();
    let noise_var = 1.0 - alpha_bar;
    let sa = alpha_bar.sqrt();
    let log_integrand = |x: &[f64]| -> f64 {
        let mut terms = [f64::NEG_INFINITY; 3];
        for ((m, &w), slot) in means.iter().zip(weights).zip(terms.iter_mut()) {
            if w > 0.0 {
                let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                *slot = w.ln() - d2 / (2.0 * std * std);
            }
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prior = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        let r2: f64 = x.iter().zip(xt).map(|(a, y)| (y - sa * a) * (y - sa * a)).sum();
        prior - r2 / (2.0 * noise_var)
    };
    let second: &[f64] = if dims == 2 { &axes[1] } else { &[0.0] };
    let point = |a: f64, b: f64| -> [f64; 2] { [a, b] };
    let mut logs = Vec::with_capacity(axes[0].len() * second.len());
    for &a in &axes[0] {
        for &b in second {
            logs.push(log_integrand(&point(a, b)[..dims]));
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mass = 0.0;
    let mut first = vec![0.0; dims];
    let mut l = logs.iter();
    for &a in &axes[0] {
        for &b in second {
            let w = (l.next().unwrap() - top).exp();
            mass += w;
            for (acc, v) in first.iter_mut().zip(point(a, b)) {
                *acc += w * v;
            }
        }
    }
    first.iter().map(|v| v / mass).collect()
}

/// Reverse mean written out from the schedule quantities directly.
pub fn reverse_mean_from_x0(x0: &[f64], xt: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let a = sched.alpha_bar(t);
    let a_prev = sched.alpha_bar(t - 1);
    let sigma = sched.sigma(t);
    let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
    x0.iter()
        .zip(xt)
        .map(|(&x0, &x)| {
            let eps = (x - a.sqrt() * x0) / (1.0 - a).sqrt();
            a_prev.sqrt() * x0 + dir * eps
        })
        .collect()
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// A draw from the mixture restricted to `cond`.
pub fn sample_world<R: Rng>(world: &MixtureWorld, c: &Condition, rng: &mut R) -> ImageTensor {
    let w = world.weights(c).unwrap();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = w.len() - 1;
    for (i, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = i;
            break;
        }
    }
    let noise = standard_normal(world.shape(), rng);
    world.components()[pick].mean.lin_comb(1.0, &noise, world.std()).unwrap()
}

pub fn random_image(shape: Shape, seed: u64) -> ImageTensor {
    let mut rng = seeded(seed);
    ImageTensor::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}
