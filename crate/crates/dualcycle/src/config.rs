//! JSON configuration files.
//!
//! # World config
//!
//! Every field is optional; the defaults are shown.
//!
//! ```json
//! {
//!   "attributes": [
//!     {"name": "color", "values": ["orange", "gray"]},
//!     {"name": "accessory", "values": ["none", "scarf", "collar"]},
//!     {"name": "ears", "values": ["pointed", "folded"]}
//!   ],
//!   "couplings": [],
//!   "std": 0.05,
//!   "canvas": {"height": 16, "width": 16, "channels": 3},
//!   "schedule": {"steps": 100, "beta_min": 0.0001, "beta_max": 0.02, "eta": 0.1}
//! }
//! ```
//!
//! A coupling reads `{"trigger": "accessory=scarf", "coupled": "ears=folded",
//! "strength": 0.95}`: whenever the trigger token holds, at least `strength`
//! of the coupled attribute's mass goes to the coupled value. Attribute names
//! and values must be ones the scene renderer knows.
//!
//! # Experiment config
//!
//! ```json
//! {
//!   "world": "world.json",
//!   "tuples": [{
//!     "id": "gray-scarf",
//!     "source": "color=gray,accessory=none,ears=pointed",
//!     "c_src": "accessory=none",
//!     "c_tgt": "accessory=scarf",
//!     "off_target": ["ears"]
//!   }],
//!   "sweep": {
//!     "dec_scales": [1, 1.5, 2, 3, 4, 5],
//!     "noise_steps": [85, 80, 75, 70, 60, 50],
//!     "ks": [85, 80, 75, 70, 60, 50]
//!   },
//!   "trials": 15,
//!   "seed": 0,
//!   "enc_scale": 1.0,
//!   "mask": {"convention": "dissimilarity", "delta": 0.5, "min_span": 0.05, "grid": 4, "threshold": 0.5},
//!   "blend_mode": "deterministic",
//!   "ablation": false,
//!   "ppm": false,
//!   "output_dir": "out"
//! }
//! ```
//!
//! `world` is either a path (relative paths resolve against the config
//! file's directory) or an inline world object; by default it is the
//! standard vocabulary with the `accessory=scarf -> ears=folded` coupling at
//! 0.95. `off_target` lists renderer regions (`background`, `body`,
//! `accessory`, `ears`) used for the off-target IoU column; when omitted it
//! is every attribute region the edit leaves unchanged. For each noise step
//! only the `ks` at or below it are run. `convention` is `dissimilarity` or
//! `abs-similarity`; `blend_mode` is `deterministic` or `stochastic`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dualcycle_core::editing::BlendMode;
use dualcycle_core::maskgen::{Convention, MaskParams, DEFAULT_DELTA, DEFAULT_GRID, DEFAULT_MIN_SPAN};
use dualcycle_core::schedule::{DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_ETA, DEFAULT_STEPS};
use dualcycle_core::world::{build_world, AttributeDef, Coupling, MixtureWorld, Region, Vocabulary, DEFAULT_STD};
use dualcycle_core::{Condition, NoiseSchedule, Shape};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeConfig {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    /// `attribute=value`
    pub trigger: String,
    /// `attribute=value`
    pub coupled: String,
    pub strength: f64,
}

fn single_token(text: &str) -> Result<(String, String)> {
    let cond = Condition::parse(text)?;
    match cond.iter().collect::<Vec<_>>()[..] {
        [(k, v)] => Ok((k.to_string(), v.to_string())),
        _ => Err(Error::Config(format!("expected one `attribute=value` token, got `{text}`"))),
    }
}

impl CouplingConfig {
    pub fn to_coupling(&self) -> Result<Coupling> {
        let (ta, tv) = single_token(&self.trigger)?;
        let (ca, cv) = single_token(&self.coupled)?;
        Ok(Coupling::new((&ta, &tv), (&ca, &cv), self.strength))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanvasConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for CanvasConfig {
    fn default() -> Self {
        Self { height: 16, width: 16, channels: 3 }
    }
}

impl CanvasConfig {
    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub eta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS, beta_min: DEFAULT_BETA_MIN, beta_max: DEFAULT_BETA_MAX, eta: DEFAULT_ETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub attributes: Vec<AttributeConfig>,
    pub couplings: Vec<CouplingConfig>,
    pub std: f64,
    pub canvas: CanvasConfig,
    pub schedule: ScheduleConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let attributes = Vocabulary::standard()
            .attributes()
            .iter()
            .map(|a| AttributeConfig { name: a.name.clone(), values: a.values.clone() })
            .collect();
        Self {
            attributes,
            couplings: Vec::new(),
            std: DEFAULT_STD,
            canvas: CanvasConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl WorldConfig {
    /// Standard world with the scarf-to-folded-ears coupling.
    pub fn scarf_bias(strength: f64) -> Self {
        Self {
            couplings: vec![CouplingConfig {
                trigger: "accessory=scarf".into(),
                coupled: "ears=folded".into(),
                strength,
            }],
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = self.schedule;
        Ok(NoiseSchedule::linear(s.steps, s.beta_min, s.beta_max, s.eta)?)
    }

    pub fn build(&self) -> Result<MixtureWorld> {
        let vocab = Vocabulary::for_renderer(
            self.attributes
                .iter()
                .map(|a| AttributeDef { name: a.name.clone(), values: a.values.clone() })
                .collect(),
        )?;
        let couplings = self.couplings.iter().map(CouplingConfig::to_coupling).collect::<Result<_>>()?;
        Ok(build_world(vocab, couplings, self.std, self.canvas.shape())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSource {
    Path(PathBuf),
    Inline(WorldConfig),
}

impl Default for WorldSource {
    fn default() -> Self {
        WorldSource::Inline(WorldConfig::scarf_bias(0.95))
    }
}

impl WorldSource {
    pub fn resolve(&self) -> Result<WorldConfig> {
        match self {
            WorldSource::Path(p) => WorldConfig::load(p),
            WorldSource::Inline(w) => Ok(w.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleConfig {
    /// Used in file names; letters, digits, `-` and `_` only.
    pub id: String,
    /// Full attribute assignment of the source scene.
    pub source: String,
    pub c_src: String,
    pub c_tgt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_target: Option<Vec<String>>,
}

impl TupleConfig {
    pub fn scarf() -> Self {
        Self {
            id: "gray-scarf".into(),
            source: "color=gray,accessory=none,ears=pointed".into(),
            c_src: "accessory=none".into(),
            c_tgt: "accessory=scarf".into(),
            off_target: Some(vec!["ears".into()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub dec_scales: Vec<f64>,
    pub noise_steps: Vec<usize>,
    pub ks: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dec_scales: vec![1.0, 1.5, 2.0, 3.0, 4.0, 5.0],
            noise_steps: vec![85, 80, 75, 70, 60, 50],
            ks: vec![85, 80, 75, 70, 60, 50],
        }
    }
}

impl SweepConfig {
    /// `ks` usable with noise step `ns`, in configured order.
    pub fn ks_for(&self, ns: usize) -> impl Iterator<Item = usize> + '_ {
        self.ks.iter().copied().filter(move |&k| k <= ns)
    }
}

mod convention_name {
    use dualcycle_core::maskgen::Convention;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(c: &Convention, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(c.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Convention, D::Error> {
        Convention::parse(&String::deserialize(d)?).map_err(D::Error::custom)
    }
}

mod blend_name {
    use dualcycle_core::editing::BlendMode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BlendMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BlendMode, D::Error> {
        BlendMode::parse(&String::deserialize(d)?).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    #[serde(with = "convention_name")]
    pub convention: Convention,
    pub delta: f64,
    pub min_span: f64,
    /// Cells per quadrant side; the refined mask is `2 grid x 2 grid`.
    pub grid: usize,
    /// Averaged masks keep cells set in more than this fraction of runs.
    pub threshold: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            convention: Convention::default(),
            delta: DEFAULT_DELTA,
            min_span: DEFAULT_MIN_SPAN,
            grid: DEFAULT_GRID,
            threshold: 0.5,
        }
    }
}

impl MaskConfig {
    pub fn params(&self) -> MaskParams {
        MaskParams { delta: self.delta, convention: self.convention, min_span: self.min_span }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSource,
    pub tuples: Vec<TupleConfig>,
    pub sweep: SweepConfig,
    pub trials: usize,
    pub seed: u64,
    pub enc_scale: f64,
    pub mask: MaskConfig,
    #[serde(with = "blend_name")]
    pub blend_mode: BlendMode,
    /// Adds biased-mask edit rows next to the unbiased ones.
    pub ablation: bool,
    /// Also write PPM copies of the PNG outputs.
    pub ppm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldSource::default(),
            tuples: vec![TupleConfig::scarf()],
            sweep: SweepConfig::default(),
            trials: 15,
            seed: 0,
            enc_scale: 1.0,
            mask: MaskConfig::default(),
            blend_mode: BlendMode::default(),
            ablation: false,
            ppm: false,
            output_dir: None,
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn filename_safe(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn parse_region(name: &str) -> Result<Region> {
    Region::ALL
        .into_iter()
        .find(|r| r.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown region `{name}`")))
}

impl ExperimentConfig {
    /// Reads a config file; a relative world path is rebased onto the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        if let WorldSource::Path(p) = &mut cfg.world {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new("")).join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Structural checks against a world config. Vocabulary membership of
    /// tuple tokens is checked per tuple at run time, so one bad tuple only
    /// fails its own trials.
    pub fn validate(&self, world: &WorldConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let steps = world.schedule.steps;
        let s = &self.sweep;
        if s.dec_scales.is_empty() || s.noise_steps.is_empty() || s.ks.is_empty() {
            return bad("dec_scales, noise_steps and ks must be nonempty".into());
        }
        if let Some(g) = s.dec_scales.iter().find(|g| !g.is_finite()) {
            return bad(format!("non-finite guidance scale {g}"));
        }
        for &ns in &s.noise_steps {
            if !(1..=steps).contains(&ns) {
                return bad(format!("noise step {ns} outside 1..={steps}"));
            }
            if s.ks_for(ns).next().is_none() {
                return bad(format!("no k at or below noise step {ns}"));
            }
        }
        if let Some(k) = s.ks.iter().find(|&&k| k == 0) {
            return bad(format!("k = {k} is not a valid split step"));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !self.enc_scale.is_finite() {
            return bad(format!("non-finite encoder scale {}", self.enc_scale));
        }
        let m = &self.mask;
        if !(0.0..=1.0).contains(&m.delta) || !(0.0..1.0).contains(&m.threshold) || m.min_span.is_nan() || m.min_span < 0.0 {
            return bad("mask delta must lie in [0, 1], threshold in [0, 1), min_span >= 0".into());
        }
        let c = world.canvas;
        if m.grid == 0 || !c.height.is_multiple_of(2) || !c.width.is_multiple_of(2) || c.height < 2 * m.grid || c.width < 2 * m.grid {
            return bad(format!("canvas {}x{} cannot hold a {}x{} quadrant grid", c.height, c.width, m.grid, m.grid));
        }
        if self.tuples.is_empty() {
            return bad("no tuples".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.tuples {
            if !filename_safe(&t.id) || !ids.insert(t.id.as_str()) {
                return bad(format!("tuple id `{}` is empty, repeated or not filename-safe", t.id));
            }
            for text in [&t.source, &t.c_src, &t.c_tgt] {
                Condition::parse(text)?;
            }
            for r in t.off_target.iter().flatten() {
                parse_region(r)?;
            }
        }
        Ok(())
    }
}
