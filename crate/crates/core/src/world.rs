//! A synthetic attribute world and its exact posterior denoiser.
//!
//! Scenes are drawn on a 16x16 base layout scaled to the canvas. Each
//! attribute owns one region of that layout and nothing else:
//!
//! | region      | base rows            | base cols          | attribute   |
//! |-------------|----------------------|--------------------|-------------|
//! | `Ears`      | 2..=5                | 2..=5 and 10..=13  | `ears`      |
//! | `Body`      | 6..=7 and 12..=13    | 2..=13             | `color`     |
//! | `Accessory` | 8..=11               | 2..=13             | `accessory` |
//! | `Background`| everything else      |                    | (fixed)     |
//!
//! The mixture places one isotropic Gaussian (variance `s^2`) on every
//! rendered attribute combination. Component priors are uniform per
//! attribute except where a [`Coupling`] skews the distribution of one
//! attribute whenever another attribute takes a trigger value; that skew is
//! the contextual bias the editing pipeline has to work around.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::condition::Condition;
use crate::error::{param_err, Error, Result};
use crate::math::{ln, log_sum_exp, sqrt};
use crate::sampler::Denoiser;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

const BASE: usize = 16;

pub const DEFAULT_STD: f64 = 0.05;
pub const DEFAULT_SHAPE: Shape = Shape::new(16, 16, 3);

const BACKGROUND: [f64; 3] = [-0.5, -0.4, -0.6];
/// Ear fill, a fixed offset from the background.
const EAR: [f64; 3] = [-0.2, -0.1, -0.3];
const NECK: [f64; 3] = [0.3, 0.2, 0.1];
const SCARF_RED: [f64; 3] = [0.9, -0.7, -0.6];
const SCARF_LIGHT: [f64; 3] = [0.7, 0.6, 0.6];
const COLLAR: [f64; 3] = [-0.6, -0.2, 0.8];
const BELL: [f64; 3] = [0.9, 0.8, -0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Background,
    Body,
    Accessory,
    Ears,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Background, Region::Body, Region::Accessory, Region::Ears];

    pub fn name(self) -> &'static str {
        match self {
            Region::Background => "background",
            Region::Body => "body",
            Region::Accessory => "accessory",
            Region::Ears => "ears",
        }
    }

    /// Region owned by a renderer attribute.
    pub fn of_attribute(attribute: &str) -> Option<Region> {
        match attribute {
            "color" => Some(Region::Body),
            "accessory" => Some(Region::Accessory),
            "ears" => Some(Region::Ears),
            _ => None,
        }
    }
}

fn base_coords(i: usize, j: usize, shape: Shape) -> (usize, usize) {
    (i * BASE / shape.height, j * BASE / shape.width)
}

fn base_region(r: usize, c: usize) -> Region {
    let in_cols = (2..=13).contains(&c);
    if (2..=5).contains(&r) && ((2..=5).contains(&c) || (10..=13).contains(&c)) {
        Region::Ears
    } else if (8..=11).contains(&r) && in_cols {
        Region::Accessory
    } else if ((6..=7).contains(&r) || (12..=13).contains(&r)) && in_cols {
        Region::Body
    } else {
        Region::Background
    }
}

/// Region of pixel `(i, j)` on a canvas of the given shape.
pub fn region_at(i: usize, j: usize, shape: Shape) -> Region {
    let (r, c) = base_coords(i, j, shape);
    base_region(r, c)
}

/// Per-pixel membership (`H * W`, row-major) of one region.
pub fn region_mask(region: Region, shape: Shape) -> Vec<bool> {
    let mut out = Vec::with_capacity(shape.pixels());
    for i in 0..shape.height {
        for j in 0..shape.width {
            out.push(region_at(i, j, shape) == region);
        }
    }
    out
}

/// Values the renderer knows how to draw, per attribute.
pub fn renderer_values(attribute: &str) -> Option<&'static [&'static str]> {
    match attribute {
        "color" => Some(&["orange", "gray", "white"]),
        "accessory" => Some(&["none", "scarf", "collar"]),
        "ears" => Some(&["pointed", "folded"]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeDef {
    pub name: String,
    pub values: Vec<String>,
}

/// Ordered attribute set; component enumeration follows this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    attributes: Vec<AttributeDef>,
}

impl Vocabulary {
    pub fn new(attributes: Vec<AttributeDef>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(param_err!("vocabulary has no attributes"));
        }
        for (i, a) in attributes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(param_err!("attribute `{}` has no values", a.name));
            }
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(param_err!("attribute `{}` listed twice", a.name));
            }
            for (j, v) in a.values.iter().enumerate() {
                if a.values[..j].contains(v) {
                    return Err(param_err!("value `{v}` listed twice for `{}`", a.name));
                }
            }
        }
        Ok(Self { attributes })
    }

    /// Renderer vocabulary restricted to the given attribute/value lists;
    /// every renderer attribute must be present with known values.
    pub fn for_renderer(attributes: Vec<AttributeDef>) -> Result<Self> {
        let vocab = Self::new(attributes)?;
        for a in &vocab.attributes {
            let known = renderer_values(&a.name)
                .ok_or_else(|| Error::Vocabulary(alloc::format!("attribute `{}`", a.name)))?;
            for v in &a.values {
                if !known.contains(&v.as_str()) {
                    return Err(Error::Vocabulary(alloc::format!("{}={v}", a.name)));
                }
            }
        }
        for name in ["color", "accessory", "ears"] {
            if vocab.attribute(name).is_none() {
                return Err(Error::Vocabulary(alloc::format!("missing attribute `{name}`")));
            }
        }
        Ok(vocab)
    }

    /// `color {orange, gray}`, `accessory {none, scarf, collar}`,
    /// `ears {pointed, folded}`: twelve components.
    pub fn standard() -> Self {
        let def = |name: &str, values: &[&str]| AttributeDef {
            name: name.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
        };
        Self::for_renderer(alloc::vec![
            def("color", &["orange", "gray"]),
            def("accessory", &["none", "scarf", "collar"]),
            def("ears", &["pointed", "folded"]),
        ])
        .expect("standard vocabulary is valid")
    }

    pub fn attributes(&self) -> &[AttributeDef] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    fn check_token(&self, attribute: &str, value: &str) -> Result<()> {
        let def = self
            .attribute(attribute)
            .ok_or_else(|| Error::Vocabulary(alloc::format!("attribute `{attribute}`")))?;
        if def.values.iter().any(|v| v == value) {
            Ok(())
        } else {
            Err(Error::Vocabulary(alloc::format!("{attribute}={value}")))
        }
    }

    /// Fails on tokens outside the vocabulary.
    pub fn check_condition(&self, cond: &Condition) -> Result<()> {
        cond.iter().try_for_each(|(k, v)| self.check_token(k, v))
    }
}

/// A full attribute assignment rendered onto a canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneSpec {
    pub attributes: Condition,
    pub shape: Shape,
}

impl SceneSpec {
    pub fn new(attributes: Condition, shape: Shape) -> Self {
        Self { attributes, shape }
    }

    /// The same scene with the tokens of `cond` applied on top.
    pub fn edited(&self, cond: &Condition) -> Self {
        let attributes = cond.iter().fold(self.attributes.clone(), |acc, (k, v)| acc.with(k, v));
        Self { attributes, shape: self.shape }
    }
}

fn attribute_value<'a>(spec: &'a SceneSpec, name: &str) -> Result<&'a str> {
    let v = spec
        .attributes
        .get(name)
        .ok_or_else(|| Error::Vocabulary(alloc::format!("scene lacks attribute `{name}`")))?;
    match renderer_values(name) {
        Some(known) if known.contains(&v) => Ok(v),
        _ => Err(Error::Vocabulary(alloc::format!("{name}={v}"))),
    }
}

fn body_color(value: &str) -> [f64; 3] {
    match value {
        "orange" => [0.8, 0.1, -0.6],
        "gray" => [0.15, 0.15, 0.25],
        _ => [0.85, 0.85, 0.8],
    }
}

fn ear_filled(style: &str, local_row: usize, local_col: usize) -> bool {
    match style {
        // Tip two pixels wide on the top two rows, full width below.
        "pointed" => local_row >= 2 || (1..=2).contains(&local_col),
        // Flat top one row down, full width below it.
        _ => local_row >= 1,
    }
}

fn accessory_color(value: &str, local_row: usize, c: usize) -> [f64; 3] {
    match value {
        "none" => NECK,
        "scarf" => {
            if local_row.is_multiple_of(2) {
                SCARF_RED
            } else {
                SCARF_LIGHT
            }
        }
        _ => {
            if local_row >= 2 && (7..=8).contains(&c) {
                BELL
            } else {
                COLLAR
            }
        }
    }
}

/// Deterministic rendering. Supports one (luma) or three channels.
pub fn render_scene(spec: &SceneSpec) -> Result<ImageTensor> {
    let shape = spec.shape;
    if shape.is_empty() || !(shape.channels == 1 || shape.channels == 3) {
        return Err(param_err!("renderer supports 1 or 3 channels, got canvas {shape}"));
    }
    let color = attribute_value(spec, "color")?;
    let accessory = attribute_value(spec, "accessory")?;
    let ears = attribute_value(spec, "ears")?;
    for (k, v) in spec.attributes.iter() {
        if renderer_values(k).is_none() {
            return Err(Error::Vocabulary(alloc::format!("{k}={v}")));
        }
    }

    let body = body_color(color);
    let mut data = Vec::with_capacity(shape.len());
    for i in 0..shape.height {
        for j in 0..shape.width {
            let (r, c) = base_coords(i, j, shape);
            let rgb = match base_region(r, c) {
                Region::Background => BACKGROUND,
                Region::Body => body,
                Region::Accessory => accessory_color(accessory, r - 8, c),
                Region::Ears => {
                    let lc = if c >= 10 { c - 10 } else { c - 2 };
                    if ear_filled(ears, r - 2, lc) {
                        EAR
                    } else {
                        BACKGROUND
                    }
                }
            };
            if shape.channels == 3 {
                data.extend_from_slice(&rgb);
            } else {
                data.push((rgb[0] + rgb[1] + rgb[2]) / 3.0);
            }
        }
    }
    ImageTensor::new(shape, data)
}

/// Whenever `trigger` holds, at least `strength` of the conditional mass of
/// the coupled attribute goes to `coupled_value`. A strength at or below the
/// uniform share leaves the distribution untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub trigger_attribute: String,
    pub trigger_value: String,
    pub coupled_attribute: String,
    pub coupled_value: String,
    pub strength: f64,
}

impl Coupling {
    pub fn new(trigger: (&str, &str), coupled: (&str, &str), strength: f64) -> Self {
        Self {
            trigger_attribute: trigger.0.to_string(),
            trigger_value: trigger.1.to_string(),
            coupled_attribute: coupled.0.to_string(),
            coupled_value: coupled.1.to_string(),
            strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Full attribute assignment.
    pub attributes: Condition,
    /// Prior weight under the unconditional query.
    pub prior: f64,
    pub mean: ImageTensor,
}

/// Gaussian mixture over rendered scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWorld {
    vocabulary: Vocabulary,
    couplings: Vec<Coupling>,
    components: Vec<Component>,
    std: f64,
    shape: Shape,
}

/// Renders every reachable attribute combination and weights it.
pub fn build_world(
    vocabulary: Vocabulary,
    couplings: Vec<Coupling>,
    std: f64,
    shape: Shape,
) -> Result<MixtureWorld> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(param_err!("component std must be positive, got {std}"));
    }
    for c in &couplings {
        vocabulary.check_token(&c.trigger_attribute, &c.trigger_value)?;
        vocabulary.check_token(&c.coupled_attribute, &c.coupled_value)?;
        if c.trigger_attribute == c.coupled_attribute {
            return Err(param_err!("coupling on `{}` couples an attribute to itself", c.trigger_attribute));
        }
        if !(0.0..=1.0).contains(&c.strength) {
            return Err(param_err!("coupling strength {} outside [0, 1]", c.strength));
        }
    }

    let attrs = vocabulary.attributes();
    let total: usize = attrs.iter().map(|a| a.values.len()).product();
    let mut components = Vec::new();
    for index in 0..total {
        let mut rem = index;
        let mut choice = alloc::vec![0usize; attrs.len()];
        for (slot, a) in choice.iter_mut().zip(attrs).rev() {
            *slot = rem % a.values.len();
            rem /= a.values.len();
        }
        let assignment = Condition::from_pairs(
            attrs.iter().zip(&choice).map(|(a, &v)| (a.name.clone(), a.values[v].clone())),
        )?;
        let prior = combination_prior(attrs, &choice, &assignment, &couplings);
        if prior <= 0.0 {
            continue;
        }
        let mean = render_scene(&SceneSpec::new(assignment.clone(), shape))?;
        components.push(Component { attributes: assignment, prior, mean });
    }

    let world = MixtureWorld { vocabulary, couplings, components, std, shape };
    world.check_supports()?;
    Ok(world)
}

fn combination_prior(
    attrs: &[AttributeDef],
    choice: &[usize],
    assignment: &Condition,
    couplings: &[Coupling],
) -> f64 {
    let mut prior = 1.0;
    for (a, &v) in attrs.iter().zip(choice) {
        let n = a.values.len() as f64;
        let mut dist = alloc::vec![1.0 / n; a.values.len()];
        for c in couplings.iter().filter(|c| {
            c.coupled_attribute == a.name && assignment.get(&c.trigger_attribute) == Some(c.trigger_value.as_str())
        }) {
            let target = a.values.iter().position(|x| *x == c.coupled_value).unwrap_or(0);
            let boosted = c.strength.max(dist[target]);
            let rest = 1.0 - dist[target];
            for (i, p) in dist.iter_mut().enumerate() {
                if i == target {
                    *p = boosted;
                } else if rest > 0.0 {
                    *p *= (1.0 - boosted) / rest;
                }
            }
        }
        prior *= dist[v];
    }
    prior
}

impl MixtureWorld {
    /// A mixture over caller-supplied components; priors are normalised.
    /// Component attribute tokens must come from `vocabulary`.
    pub fn from_components(vocabulary: Vocabulary, components: Vec<Component>, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(param_err!("component std must be positive, got {std}"));
        }
        let first = components.first().ok_or_else(|| {
            Error::WorldConstruction("mixture needs at least one component".into())
        })?;
        let shape = first.mean.shape();
        let mut total = 0.0;
        for c in &components {
            c.mean.ensure_shape(shape)?;
            vocabulary.check_condition(&c.attributes)?;
            if !(c.prior >= 0.0 && c.prior.is_finite()) {
                return Err(param_err!("component prior must be non-negative"));
            }
            total += c.prior;
        }
        if total <= 0.0 {
            return Err(Error::WorldConstruction("all component priors are zero".into()));
        }
        let components = components
            .into_iter()
            .map(|c| Component { prior: c.prior / total, ..c })
            .collect();
        Ok(Self { vocabulary, couplings: Vec::new(), components, std, shape })
    }

    fn check_supports(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::WorldConstruction("no reachable components".into()));
        }
        for a in self.vocabulary.attributes() {
            for v in &a.values {
                let cond = Condition::from_pairs([(a.name.as_str(), v.as_str())])?;
                if self.weights(&cond).is_err() {
                    return Err(Error::WorldConstruction(alloc::format!(
                        "condition {cond} has no reachable component"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Component weights under `cond`: priors restricted to components whose
    /// attributes agree with every token, renormalised to sum to one.
    pub fn weights(&self, cond: &Condition) -> Result<Vec<f64>> {
        self.vocabulary.check_condition(cond)?;
        let mut w: Vec<f64> = self
            .components
            .iter()
            .map(|k| {
                let consistent = cond.iter().all(|(a, v)| k.attributes.get(a) == Some(v));
                if consistent {
                    k.prior
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::WorldConstruction(alloc::format!(
                "condition {cond} has no reachable component"
            )));
        }
        w.iter_mut().for_each(|x| *x /= total);
        Ok(w)
    }

    /// Posterior component probabilities given a noisy state `x_t`.
    pub fn responsibilities(
        &self,
        xt: &ImageTensor,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        sched.check_step(t)?;
        xt.ensure_shape(self.shape)?;
        let weights = self.weights(cond)?;
        let a = sched.alpha_bar(t);
        let sa = sqrt(a);
        let var = a * self.variance() + (1.0 - a);
        let logits: Vec<f64> = self
            .components
            .iter()
            .zip(&weights)
            .map(|(k, &w)| {
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d2: f64 = xt
                    .as_slice()
                    .iter()
                    .zip(k.mean.as_slice())
                    .map(|(x, m)| {
                        let d = x - sa * m;
                        d * d
                    })
                    .sum();
                ln(w) - d2 / (2.0 * var)
            })
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::Degenerate("all responsibilities vanished".into()));
        }
        let shifted: Vec<f64> = logits.iter().map(|&l| crate::math::exp(l - top)).collect();
        let total: f64 = shifted.iter().sum();
        Ok(shifted.iter().map(|&e| e / total).collect())
    }

    /// `E[x_0 | x_t, c]` under the mixture.
    ///
    /// Per component the conjugate posterior mean is
    /// `mu_k + g (x_t - sqrt(a) mu_k)` with `g = sqrt(a) s^2 / (a s^2 + 1 - a)`.
    pub fn posterior_x0(
        &self,
        xt: &ImageTensor,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> Result<ImageTensor> {
        let resp = self.responsibilities(xt, t, cond, sched)?;
        let a = sched.alpha_bar(t);
        let sa = sqrt(a);
        let gain = sa * self.variance() / (a * self.variance() + 1.0 - a);
        let mut mixed = alloc::vec![0.0; self.shape.len()];
        for (k, &r) in self.components.iter().zip(&resp) {
            if r == 0.0 {
                continue;
            }
            for (acc, &m) in mixed.iter_mut().zip(k.mean.as_slice()) {
                *acc += r * m;
            }
        }
        let keep = 1.0 - gain * sa;
        let data = mixed
            .iter()
            .zip(xt.as_slice())
            .map(|(&m, &x)| keep * m + gain * x)
            .collect();
        Ok(ImageTensor::from_parts(self.shape, data))
    }

    /// `log sum_k w_k(c) N(x0; mu_k, s^2 I)`.
    pub fn log_likelihood(&self, x0: &ImageTensor, cond: &Condition) -> Result<f64> {
        x0.ensure_shape(self.shape)?;
        let weights = self.weights(cond)?;
        let var = self.variance();
        let logits: Vec<f64> = self
            .components
            .iter()
            .zip(&weights)
            .map(|(k, &w)| {
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d2: f64 = x0
                    .as_slice()
                    .iter()
                    .zip(k.mean.as_slice())
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum();
                ln(w) - d2 / (2.0 * var)
            })
            .collect();
        let n = self.shape.len() as f64;
        Ok(log_sum_exp(&logits) - 0.5 * n * ln(2.0 * core::f64::consts::PI * var))
    }

    /// Rendered mean of the component matching a full assignment.
    pub fn template(&self, attributes: &Condition) -> Option<&ImageTensor> {
        self.components.iter().find(|k| &k.attributes == attributes).map(|k| &k.mean)
    }
}

/// Eta-parameterised reverse mean built from the mixture posterior.
pub fn analytic_mean(
    xt: &ImageTensor,
    t: usize,
    cond: &Condition,
    world: &MixtureWorld,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    let x0 = world.posterior_x0(xt, t, cond, sched)?;
    let a = sched.alpha_bar(t);
    let (x0_coef, dir) = sched.x0_form(t);
    let (sa, sn) = (sqrt(a), sqrt(1.0 - a));
    let data = x0
        .as_slice()
        .iter()
        .zip(xt.as_slice())
        .map(|(&x0, &x)| {
            let eps = (x - sa * x0) / sn;
            x0_coef * x0 + dir * eps
        })
        .collect();
    Ok(ImageTensor::from_parts(xt.shape(), data))
}

/// The optimal denoiser for a [`MixtureWorld`].
#[derive(Debug, Clone, Copy)]
pub struct AnalyticDenoiser<'a> {
    pub world: &'a MixtureWorld,
    pub schedule: &'a NoiseSchedule,
}

impl<'a> AnalyticDenoiser<'a> {
    pub fn new(world: &'a MixtureWorld, schedule: &'a NoiseSchedule) -> Self {
        Self { world, schedule }
    }
}

impl Denoiser for AnalyticDenoiser<'_> {
    fn reverse_mean(&self, xt: &ImageTensor, t: usize, cond: &Condition) -> Result<ImageTensor> {
        analytic_mean(xt, t, cond, self.world, self.schedule)
    }
}
