//! Sweep orchestration: cycles, mask averaging, guided edits, scoring and
//! per-tuple selection.
//!
//! Trial `r` of hyperparameter combination `c` of tuple `i` runs on
//! `derive_seed([seed, i, c, r])`, where `c = scale_index *
//! noise_steps.len() + step_index` and `i` is the tuple's position in the
//! config. The mask pass and the edit pass reuse that seed, so the forward
//! path of every cycle is replayed exactly. Derived streams: the stochastic
//! blend at split step `k` uses `derive_seed([trial_seed, k])`, the forward
//! noising baseline `derive_seed([trial_seed, SDEDIT_STREAM])`, and the
//! noise-contrast mask `derive_seed([seed, i, DIFFEDIT_STREAM])`.
//!
//! Jobs run on the rayon pool; results are collected in job order and all
//! aggregation happens afterwards on one thread, so outputs do not depend
//! on scheduling.

use dualcycle_core::cycles::{be_cycle, sc_cycle, CycleParams, ScOutput};
use dualcycle_core::editing::{masked_edit, EditRequest};
use dualcycle_core::maskgen::{average_masks, grid_refine, resize_mask, EditMask, PatchMeans, PatchStats};
use dualcycle_core::metrics::{score, ScoreReport};
use dualcycle_core::rng::{derive_seed, seeded};
use dualcycle_core::world::{
    region_mask, render_scene, AnalyticDenoiser, MixtureWorld, Region, SceneSpec,
};
use dualcycle_core::{Condition, ImageTensor, NoiseSchedule, Sampler, Shape};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::baselines::{diffedit_mask, sdedit};
use crate::config::{parse_region, ExperimentConfig, TupleConfig, WorldConfig};
use crate::error::Result;

pub const SDEDIT_STREAM: u64 = 0x5DED;
pub const DIFFEDIT_STREAM: u64 = 0xD1FF;
/// Noisings averaged by the noise-contrast mask.
pub const DIFFEDIT_DRAWS: usize = 8;

/// A validated config with its world built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub world_config: WorldConfig,
    pub world: MixtureWorld,
    pub schedule: NoiseSchedule,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let world_config = config.world.resolve()?;
        config.validate(&world_config)?;
        let world = world_config.build()?;
        let schedule = world_config.schedule()?;
        Ok(Self { config, world_config, world, schedule })
    }
}

/// Editing method of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Structural-consistency cycle without a mask.
    ScPlain,
    /// Averaged target-vs-inverted mask, patch-statistic features.
    Unbiased,
    /// Averaged source-vs-target mask, patch-statistic features.
    Biased,
    UnbiasedPlainFeatures,
    BiasedPlainFeatures,
    /// Forward noising plus conditional decoding.
    SdEdit,
    /// Masked edit with the noise-contrast mask.
    DiffEdit,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ScPlain,
        Method::Unbiased,
        Method::Biased,
        Method::UnbiasedPlainFeatures,
        Method::BiasedPlainFeatures,
        Method::SdEdit,
        Method::DiffEdit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ScPlain => "sc-plain",
            Method::Unbiased => "unbiased",
            Method::Biased => "biased",
            Method::UnbiasedPlainFeatures => "unbiased-plainfeat",
            Method::BiasedPlainFeatures => "biased-plainfeat",
            Method::SdEdit => "sdedit",
            Method::DiffEdit => "diffedit",
        }
    }

    pub fn mask_kind(self) -> Option<MaskKind> {
        match self {
            Method::ScPlain | Method::SdEdit => None,
            Method::Unbiased => Some(MaskKind::Unbiased),
            Method::Biased => Some(MaskKind::Biased),
            Method::UnbiasedPlainFeatures => Some(MaskKind::UnbiasedPlainFeatures),
            Method::BiasedPlainFeatures => Some(MaskKind::BiasedPlainFeatures),
            Method::DiffEdit => Some(MaskKind::DiffEdit),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskKind {
    Unbiased,
    Biased,
    UnbiasedPlainFeatures,
    BiasedPlainFeatures,
    DiffEdit,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Unbiased => "unbiased",
            MaskKind::Biased => "biased",
            MaskKind::UnbiasedPlainFeatures => "unbiased-plainfeat",
            MaskKind::BiasedPlainFeatures => "biased-plainfeat",
            MaskKind::DiffEdit => "diffedit",
        }
    }

    /// `rich`, `plain` or `-` for the noise-contrast mask.
    pub fn features(self) -> &'static str {
        match self {
            MaskKind::Unbiased | MaskKind::Biased => "rich",
            MaskKind::UnbiasedPlainFeatures | MaskKind::BiasedPlainFeatures => "plain",
            MaskKind::DiffEdit => "-",
        }
    }

    /// Which pair of images the mask contrasts.
    pub fn pair(self) -> &'static str {
        match self {
            MaskKind::Unbiased | MaskKind::UnbiasedPlainFeatures => "target-inverted",
            MaskKind::Biased | MaskKind::BiasedPlainFeatures => "source-target",
            MaskKind::DiffEdit => "noise-contrast",
        }
    }

    fn is_cycle(self) -> bool {
        self != MaskKind::DiffEdit
    }
}

impl Serialize for MaskKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskScope {
    /// One cycle run.
    Run,
    /// Computed once per tuple (noise-contrast mask).
    Tuple,
    /// Average over all runs of the tuple; the mask the edits use.
    Average,
}

/// One row of `masks.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskRecord {
    pub tuple: String,
    pub kind: MaskKind,
    pub scope: MaskScope,
    pub dec_scale: Option<f64>,
    pub noise_step: Option<usize>,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub status: Status,
    pub area: Option<f64>,
    /// IoU with the pixels the edit should change.
    pub edit_iou: Option<f64>,
    /// IoU with the tuple's off-target regions.
    pub off_target_iou: Option<f64>,
    pub error: Option<String>,
}

/// One row of `records.csv`: a single edit and its scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub tuple: String,
    pub method: Method,
    pub dec_scale: f64,
    pub noise_step: usize,
    pub k: Option<usize>,
    pub trial: usize,
    pub seed: u64,
    pub status: Status,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub align: Option<f64>,
    pub d_align: Option<f64>,
    pub psnr_outside: Option<f64>,
    pub mask_area: Option<f64>,
    pub mask_edit_iou: Option<f64>,
    pub mask_off_target_iou: Option<f64>,
    pub background_to_source: Option<f64>,
    pub background_to_template: Option<f64>,
    pub body_to_source: Option<f64>,
    pub body_to_template: Option<f64>,
    pub accessory_to_source: Option<f64>,
    pub accessory_to_template: Option<f64>,
    pub ears_to_source: Option<f64>,
    pub ears_to_template: Option<f64>,
    /// Highest `d_align` of its tuple and method.
    pub selected: bool,
    /// Output-relative path of the saved edit, set on selected rows.
    pub image: Option<String>,
    pub error: Option<String>,
}

impl RunRecord {
    fn new(tuple: &str, method: Method, combo: &Combo, k: Option<usize>, trial: usize, seed: u64) -> Self {
        Self {
            tuple: tuple.to_string(),
            method,
            dec_scale: combo.scale,
            noise_step: combo.noise_step,
            k,
            trial,
            seed,
            status: Status::Failed,
            psnr: None,
            ssim: None,
            align: None,
            d_align: None,
            psnr_outside: None,
            mask_area: None,
            mask_edit_iou: None,
            mask_off_target_iou: None,
            background_to_source: None,
            background_to_template: None,
            body_to_source: None,
            body_to_template: None,
            accessory_to_source: None,
            accessory_to_template: None,
            ears_to_source: None,
            ears_to_template: None,
            selected: false,
            image: None,
            error: None,
        }
    }

    fn set_scores(&mut self, r: &ScoreReport) {
        self.status = Status::Ok;
        self.psnr = Some(r.psnr);
        self.ssim = Some(r.ssim);
        self.align = Some(r.align);
        self.d_align = Some(r.d_align);
        self.psnr_outside = Some(r.psnr_outside);
        let pick = |region| r.region(region).map(|s| (s.to_source, s.to_template)).unzip();
        (self.background_to_source, self.background_to_template) = pick(Region::Background);
        (self.body_to_source, self.body_to_template) = pick(Region::Body);
        (self.accessory_to_source, self.accessory_to_template) = pick(Region::Accessory);
        (self.ears_to_source, self.ears_to_template) = pick(Region::Ears);
    }
}

/// Images and masks of one tuple, for writing to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleOutput {
    pub id: String,
    pub source: Option<ImageTensor>,
    pub template: Option<ImageTensor>,
    /// Masks the edits used: averaged cycle masks at grid resolution and
    /// the noise-contrast mask at pixel resolution.
    pub masks: Vec<(MaskKind, EditMask)>,
    /// Selected edit per method.
    pub best: Vec<(Method, ImageTensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub masks: Vec<MaskRecord>,
    pub tuples: Vec<TupleOutput>,
}

impl RunOutput {
    /// Failed edit and mask rows.
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.status == Status::Failed).count()
            + self.masks.iter().filter(|m| m.status == Status::Failed).count()
    }

    pub fn selected(&self, tuple: &str, method: Method) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.selected && r.tuple == tuple && r.method == method)
    }

    pub fn best_image(&self, tuple: &str, method: Method) -> Option<&ImageTensor> {
        let t = self.tuples.iter().find(|t| t.id == tuple)?;
        t.best.iter().find(|(m, _)| *m == method).map(|(_, img)| img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combo {
    pub index: usize,
    pub scale: f64,
    pub noise_step: usize,
}

pub fn combos(cfg: &ExperimentConfig) -> Vec<Combo> {
    let steps = &cfg.sweep.noise_steps;
    cfg.sweep
        .dec_scales
        .iter()
        .enumerate()
        .flat_map(|(si, &scale)| {
            steps.iter().enumerate().map(move |(ni, &noise_step)| Combo {
                index: si * steps.len() + ni,
                scale,
                noise_step,
            })
        })
        .collect()
}

pub fn trial_seed(master: u64, tuple: usize, combo: usize, trial: usize) -> u64 {
    derive_seed(&[master, tuple as u64, combo as u64, trial as u64])
}

/// A tuple resolved against the world.
#[derive(Debug, Clone)]
struct Tuple {
    x0: ImageTensor,
    template: ImageTensor,
    c_src: Condition,
    c_tgt: Condition,
    edit_region: Vec<bool>,
    off_target: Vec<bool>,
}

fn union_mask(regions: &[Region], shape: Shape) -> Vec<bool> {
    let mut out = vec![false; shape.pixels()];
    for &r in regions {
        for (o, m) in out.iter_mut().zip(region_mask(r, shape)) {
            *o |= m;
        }
    }
    out
}

fn prepare(cfg: &TupleConfig, world: &MixtureWorld) -> Result<Tuple> {
    let attrs = Condition::parse(&cfg.source)?;
    let c_src = Condition::parse(&cfg.c_src)?;
    let c_tgt = Condition::parse(&cfg.c_tgt)?;
    for c in [&attrs, &c_src, &c_tgt] {
        world.vocabulary().check_condition(c)?;
    }
    let source = SceneSpec::new(attrs, world.shape());
    let target = source.edited(&c_tgt);
    let (mut changed, mut kept) = (Vec::new(), Vec::new());
    for (name, value) in source.attributes.iter() {
        if let Some(region) = Region::of_attribute(name) {
            if target.attributes.get(name) == Some(value) {
                kept.push(region);
            } else {
                changed.push(region);
            }
        }
    }
    let off = match &cfg.off_target {
        Some(names) => names.iter().map(|n| parse_region(n)).collect::<Result<Vec<_>>>()?,
        None => kept,
    };
    Ok(Tuple {
        x0: render_scene(&source)?,
        template: render_scene(&target)?,
        c_src,
        c_tgt,
        edit_region: union_mask(&changed, world.shape()),
        off_target: union_mask(&off, world.shape()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MaskStats {
    area: f64,
    edit_iou: f64,
    off_target_iou: f64,
}

fn mask_stats(mask: &EditMask, t: &Tuple) -> Result<MaskStats> {
    let px = resize_mask(mask, t.x0.height(), t.x0.width())?;
    Ok(MaskStats {
        area: px.area_fraction(),
        edit_iou: px.iou(&t.edit_region)?,
        off_target_iou: px.iou(&t.off_target)?,
    })
}

/// Averaged (or per-tuple) mask of one kind, at pixel resolution.
#[derive(Debug, Clone)]
struct TupleMask {
    kind: MaskKind,
    grid: EditMask,
    pixels: EditMask,
    stats: MaskStats,
}

type JobResult<T> = std::result::Result<T, String>;

struct Ctx<'a> {
    exp: &'a Experiment,
    sampler: Sampler<'a, AnalyticDenoiser<'a>>,
    methods: &'a [Method],
    kinds: Vec<MaskKind>,
}

impl Ctx<'_> {
    fn cfg(&self) -> &ExperimentConfig {
        &self.exp.config
    }

    fn cycle(&self, combo: &Combo) -> CycleParams {
        CycleParams { enc_scale: self.cfg().enc_scale, dec_scale: combo.scale, noise_step: combo.noise_step }
    }

    fn mask_job(&self, t: &Tuple, combo: &Combo, seed: u64) -> Result<Vec<EditMask>> {
        let out = be_cycle(&self.sampler, &t.x0, &t.c_src, &t.c_tgt, self.cycle(combo), &mut seeded(seed))?;
        let g = self.cfg().mask.grid;
        let params = self.cfg().mask.params();
        let (rich, plain) = (PatchStats { rows: g, cols: g }, PatchMeans { rows: g, cols: g });
        let (src, tgt, inv) = (&t.x0, &out.x0_target, &out.x0_inv);
        let mut masks = Vec::with_capacity(self.kinds.len());
        for kind in &self.kinds {
            masks.push(match kind {
                MaskKind::Unbiased => grid_refine(tgt, inv, &rich, &params)?,
                MaskKind::Biased => grid_refine(src, tgt, &rich, &params)?,
                MaskKind::UnbiasedPlainFeatures => grid_refine(tgt, inv, &plain, &params)?,
                MaskKind::BiasedPlainFeatures => grid_refine(src, tgt, &plain, &params)?,
                MaskKind::DiffEdit => unreachable!("not a cycle mask"),
            });
        }
        Ok(masks)
    }

    #[allow(clippy::too_many_arguments)]
    fn edit(
        &self,
        method: Method,
        k: Option<usize>,
        t: &Tuple,
        sc: &JobResult<ScOutput>,
        mask: Option<&TupleMask>,
        combo: &Combo,
        seed: u64,
    ) -> JobResult<ImageTensor> {
        let text = |e: dualcycle_core::Error| e.to_string();
        match (method, k) {
            (Method::ScPlain, _) => sc.as_ref().map(|o| o.x0_target.clone()).map_err(Clone::clone),
            (Method::SdEdit, _) => {
                let mut rng = seeded(derive_seed(&[seed, SDEDIT_STREAM]));
                sdedit(&self.sampler, &t.x0, &t.c_tgt, combo.noise_step, combo.scale, &mut rng).map_err(text)
            }
            (_, Some(k)) => {
                let o = sc.as_ref().map_err(Clone::clone)?;
                let mask = mask.ok_or_else(|| format!("no {} mask for this tuple", method.name()))?;
                let req = EditRequest {
                    x0_src: t.x0.clone(),
                    c_src: t.c_src.clone(),
                    c_tgt: t.c_tgt.clone(),
                    mask: mask.pixels.clone(),
                    k,
                    noise_step: combo.noise_step,
                    dec_scale: combo.scale,
                    blend_mode: self.cfg().blend_mode,
                };
                let mut rng = seeded(derive_seed(&[seed, k as u64]));
                masked_edit(&self.sampler, &req, &o.z_source, &o.trajectory, &mut rng).map_err(text)
            }
            (_, None) => Err(format!("{} needs a split step", method.name())),
        }
    }

    fn edit_job(
        &self,
        id: &str,
        tuple: &JobResult<Tuple>,
        masks: &[TupleMask],
        combo: &Combo,
        trial: usize,
        seed: u64,
    ) -> EditJob {
        let sc = match tuple {
            Ok(t) => sc_cycle(&self.sampler, &t.x0, &t.c_src, &t.c_tgt, self.cycle(combo), &mut seeded(seed))
                .map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        let mut job = EditJob::default();
        for &method in self.methods {
            let ks: Vec<Option<usize>> = match method.mask_kind() {
                Some(_) => self.cfg().sweep.ks_for(combo.noise_step).map(Some).collect(),
                None => vec![None],
            };
            let mask = method.mask_kind().and_then(|kind| masks.iter().find(|m| m.kind == kind));
            for k in ks {
                let mut rec = RunRecord::new(id, method, combo, k, trial, seed);
                if let Some(m) = mask {
                    rec.mask_area = Some(m.stats.area);
                    rec.mask_edit_iou = Some(m.stats.edit_iou);
                    rec.mask_off_target_iou = Some(m.stats.off_target_iou);
                }
                let outcome = tuple.as_ref().map_err(Clone::clone).and_then(|t| {
                    let img = self.edit(method, k, t, &sc, mask, combo, seed)?;
                    let report = score(&img, &t.x0, &t.template, &t.c_src, &t.c_tgt, &self.exp.world, &t.edit_region)
                        .map_err(|e| e.to_string())?;
                    Ok((img, report))
                });
                match outcome {
                    Ok((img, report)) => {
                        rec.set_scores(&report);
                        job.offer(method, job.records.len(), report.d_align, img);
                    }
                    Err(e) => rec.error = Some(e),
                }
                job.records.push(rec);
            }
        }
        job
    }
}

/// Records of one (tuple, combination, trial) plus its best edit per
/// method.
#[derive(Default)]
struct EditJob {
    records: Vec<RunRecord>,
    best: Vec<(Method, usize, f64, ImageTensor)>,
}

impl EditJob {
    /// Keeps the first edit with the strictly highest score.
    fn offer(&mut self, method: Method, index: usize, d: f64, img: ImageTensor) {
        match self.best.iter_mut().find(|b| b.0 == method) {
            Some(b) if d > b.2 => *b = (method, index, d, img),
            Some(_) => {}
            None => self.best.push((method, index, d, img)),
        }
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn execute(exp: &Experiment, methods: &[Method]) -> RunOutput {
    let cfg = &exp.config;
    let den = AnalyticDenoiser::new(&exp.world, &exp.schedule);
    let mut kinds = vec![MaskKind::Unbiased, MaskKind::Biased];
    for m in methods.iter().filter_map(|m| m.mask_kind()) {
        if m.is_cycle() && !kinds.contains(&m) {
            kinds.push(m);
        }
    }
    let ctx = Ctx { exp, sampler: Sampler::new(&den, &exp.schedule), methods, kinds };
    let tuples: Vec<JobResult<Tuple>> =
        cfg.tuples.iter().map(|t| prepare(t, &exp.world).map_err(|e| format!("tuple `{}`: {e}", t.id))).collect();
    let combos = combos(cfg);
    let jobs: Vec<(usize, Combo, usize, u64)> = (0..tuples.len())
        .flat_map(|ti| {
            combos.iter().flat_map(move |c| {
                (0..cfg.trials).map(move |r| (ti, *c, r, trial_seed(cfg.seed, ti, c.index, r)))
            })
        })
        .collect();

    let cycle_masks: Vec<JobResult<Vec<EditMask>>> = jobs
        .par_iter()
        .map(|&(ti, combo, _, seed)| {
            let t = tuples[ti].as_ref().map_err(Clone::clone)?;
            ctx.mask_job(t, &combo, seed).map_err(|e| e.to_string())
        })
        .collect();

    let mut mask_records = Vec::new();
    let mut per_tuple: Vec<Vec<TupleMask>> = vec![Vec::new(); tuples.len()];
    for (ti, tuple) in tuples.iter().enumerate() {
        let cfg_id = &cfg.tuples[ti].id;
        let runs: Vec<_> = jobs.iter().zip(&cycle_masks).filter(|((i, ..), _)| *i == ti).collect();
        for (ki, &kind) in ctx.kinds.iter().enumerate() {
            let mut ok = Vec::new();
            for ((_, combo, trial, seed), result) in &runs {
                let mut rec = MaskRecord {
                    tuple: cfg_id.clone(),
                    kind,
                    scope: MaskScope::Run,
                    dec_scale: Some(combo.scale),
                    noise_step: Some(combo.noise_step),
                    trial: Some(*trial),
                    seed: Some(*seed),
                    status: Status::Failed,
                    area: None,
                    edit_iou: None,
                    off_target_iou: None,
                    error: None,
                };
                match (result, tuple) {
                    (Ok(masks), Ok(t)) => match mask_stats(&masks[ki], t) {
                        Ok(s) => {
                            rec.fill(s);
                            ok.push(masks[ki].clone());
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    },
                    (Err(e), _) | (_, Err(e)) => rec.error = Some(e.clone()),
                }
                mask_records.push(rec);
            }
            let averaged = tuple.as_ref().map_err(Clone::clone).and_then(|t| {
                let grid = average_masks(&ok, cfg.mask.threshold).map_err(|e| e.to_string())?;
                let pixels = resize_mask(&grid, t.x0.height(), t.x0.width()).map_err(|e| e.to_string())?;
                let stats = mask_stats(&grid, t).map_err(|e| e.to_string())?;
                Ok(TupleMask { kind, grid, pixels, stats })
            });
            mask_records.push(MaskRecord::summary(cfg_id, kind, MaskScope::Average, &averaged));
            per_tuple[ti].extend(averaged.ok());
        }
        if methods.contains(&Method::DiffEdit) {
            let contrast = tuple.as_ref().map_err(Clone::clone).and_then(|t| {
                let mut rng = seeded(derive_seed(&[cfg.seed, ti as u64, DIFFEDIT_STREAM]));
                let pixels = diffedit_mask(&ctx.sampler, &t.x0, &t.c_src, &t.c_tgt, DIFFEDIT_DRAWS, &mut rng)
                    .map_err(|e| e.to_string())?;
                let stats = mask_stats(&pixels, t).map_err(|e| e.to_string())?;
                Ok(TupleMask { kind: MaskKind::DiffEdit, grid: pixels.clone(), pixels, stats })
            });
            mask_records.push(MaskRecord::summary(cfg_id, MaskKind::DiffEdit, MaskScope::Tuple, &contrast));
            per_tuple[ti].extend(contrast.ok());
        }
    }

    let edit_jobs: Vec<EditJob> = jobs
        .par_iter()
        .map(|&(ti, combo, trial, seed)| ctx.edit_job(&cfg.tuples[ti].id, &tuples[ti], &per_tuple[ti], &combo, trial, seed))
        .collect();

    let mut records = Vec::new();
    let mut best: Vec<Vec<(Method, usize, f64, ImageTensor)>> = vec![Vec::new(); tuples.len()];
    for ((ti, ..), job) in jobs.iter().zip(edit_jobs) {
        let offset = records.len();
        for (method, index, d, img) in job.best {
            let slot = &mut best[*ti];
            match slot.iter_mut().find(|b| b.0 == method) {
                Some(b) if d > b.2 => *b = (method, offset + index, d, img),
                Some(_) => {}
                None => slot.push((method, offset + index, d, img)),
            }
        }
        records.extend(job.records);
    }

    let mut outputs = Vec::with_capacity(tuples.len());
    for (ti, tuple) in tuples.iter().enumerate() {
        let id = cfg.tuples[ti].id.clone();
        let mut chosen = std::mem::take(&mut best[ti]);
        chosen.sort_by_key(|b| methods.iter().position(|m| *m == b.0));
        for (method, index, ..) in &chosen {
            records[*index].selected = true;
            records[*index].image = Some(format!("{id}/best_{}.png", method.name()));
        }
        outputs.push(TupleOutput {
            id,
            source: tuple.as_ref().ok().map(|t| t.x0.clone()),
            template: tuple.as_ref().ok().map(|t| t.template.clone()),
            masks: per_tuple[ti].iter().map(|m| (m.kind, m.grid.clone())).collect(),
            best: chosen.into_iter().map(|(m, _, _, img)| (m, img)).collect(),
        });
    }
    RunOutput { records, masks: mask_records, tuples: outputs }
}

impl MaskRecord {
    fn fill(&mut self, s: MaskStats) {
        self.status = Status::Ok;
        self.area = Some(s.area);
        self.edit_iou = Some(s.edit_iou);
        self.off_target_iou = Some(s.off_target_iou);
    }

    fn summary(tuple: &str, kind: MaskKind, scope: MaskScope, mask: &JobResult<TupleMask>) -> Self {
        let mut rec = MaskRecord {
            tuple: tuple.to_string(),
            kind,
            scope,
            dec_scale: None,
            noise_step: None,
            trial: None,
            seed: None,
            status: Status::Failed,
            area: None,
            edit_iou: None,
            off_target_iou: None,
            error: None,
        };
        match mask {
            Ok(m) => rec.fill(m.stats),
            Err(e) => rec.error = Some(e.clone()),
        }
        rec
    }
}

/// The protocol run: biased and unbiased masks from every cycle, edits with
/// the averaged unbiased mask (plus the biased one when `ablation` is set)
/// next to plain cycle edits, scores and per-tuple selection by `d_align`.
pub fn run_experiment(exp: &Experiment) -> RunOutput {
    let methods: &[Method] = if exp.config.ablation {
        &[Method::ScPlain, Method::Unbiased, Method::Biased]
    } else {
        &[Method::ScPlain, Method::Unbiased]
    };
    execute(exp, methods)
}

/// Per-tuple, per-method aggregate with the selected edit's settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub tuple: String,
    pub method: Method,
    pub edits: usize,
    pub failed: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub align: Option<f64>,
    pub d_align: Option<f64>,
    pub psnr_outside: Option<f64>,
    pub best_dec_scale: Option<f64>,
    pub best_noise_step: Option<usize>,
    pub best_k: Option<usize>,
    pub best_trial: Option<usize>,
    pub best_psnr: Option<f64>,
    pub best_ssim: Option<f64>,
    pub best_align: Option<f64>,
    pub best_d_align: Option<f64>,
    pub best_psnr_outside: Option<f64>,
}

fn method_order(records: &[RunRecord]) -> Vec<Method> {
    let mut seen: Vec<Method> = Vec::new();
    for r in records {
        if !seen.contains(&r.method) {
            seen.push(r.method);
        }
    }
    seen
}

pub fn summarize(out: &RunOutput) -> Vec<SummaryRow> {
    let methods = method_order(&out.records);
    let mut rows = Vec::new();
    for t in &out.tuples {
        for &method in &methods {
            let group: Vec<&RunRecord> =
                out.records.iter().filter(|r| r.tuple == t.id && r.method == method).collect();
            let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.status == Status::Ok).collect();
            let avg = |f: fn(&RunRecord) -> Option<f64>| mean(ok.iter().filter_map(|r| f(r)));
            let best = ok.iter().find(|r| r.selected);
            rows.push(SummaryRow {
                tuple: t.id.clone(),
                method,
                edits: group.len(),
                failed: group.len() - ok.len(),
                psnr: avg(|r| r.psnr),
                ssim: avg(|r| r.ssim),
                align: avg(|r| r.align),
                d_align: avg(|r| r.d_align),
                psnr_outside: avg(|r| r.psnr_outside),
                best_dec_scale: best.map(|r| r.dec_scale),
                best_noise_step: best.map(|r| r.noise_step),
                best_k: best.and_then(|r| r.k),
                best_trial: best.map(|r| r.trial),
                best_psnr: best.and_then(|r| r.psnr),
                best_ssim: best.and_then(|r| r.ssim),
                best_align: best.and_then(|r| r.align),
                best_d_align: best.and_then(|r| r.d_align),
                best_psnr_outside: best.and_then(|r| r.psnr_outside),
            });
        }
    }
    rows
}

/// One row of the mode comparison table, pooled over tuples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: Method,
    /// `rich`, `plain` or `-`.
    pub features: &'static str,
    /// Image pair the mask contrasts, or `-` for maskless modes.
    pub mask_pair: &'static str,
    pub edits: usize,
    pub failed: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub align: Option<f64>,
    pub d_align: Option<f64>,
    pub psnr_outside: Option<f64>,
    /// Per-run (or per-tuple) masks behind the statistics below.
    pub masks: usize,
    pub mask_area: Option<f64>,
    pub mask_edit_iou: Option<f64>,
    pub off_target_iou: Option<f64>,
}

pub struct Comparison {
    pub run: RunOutput,
    pub table: Vec<ModeSummary>,
}

/// Every method over the same sweep, pooled into one row per mode in
/// [`Method::ALL`] order. Mask statistics come from the individual cycle
/// masks rather than the averaged ones.
pub fn compare_modes(exp: &Experiment) -> Comparison {
    let run = execute(exp, &Method::ALL);
    let table = mode_table(&run);
    Comparison { run, table }
}

pub fn mode_table(run: &RunOutput) -> Vec<ModeSummary> {
    method_order(&run.records)
        .into_iter()
        .map(|mode| {
            let group: Vec<&RunRecord> = run.records.iter().filter(|r| r.method == mode).collect();
            let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.status == Status::Ok).collect();
            let avg = |f: fn(&RunRecord) -> Option<f64>| mean(ok.iter().filter_map(|r| f(r)));
            let kind = mode.mask_kind();
            let masks: Vec<&MaskRecord> = run
                .masks
                .iter()
                .filter(|m| Some(m.kind) == kind && m.scope != MaskScope::Average && m.status == Status::Ok)
                .collect();
            let mask_avg = |f: fn(&MaskRecord) -> Option<f64>| mean(masks.iter().filter_map(|m| f(m)));
            ModeSummary {
                mode,
                features: kind.map_or("-", MaskKind::features),
                mask_pair: kind.map_or("-", MaskKind::pair),
                edits: group.len(),
                failed: group.len() - ok.len(),
                psnr: avg(|r| r.psnr),
                ssim: avg(|r| r.ssim),
                align: avg(|r| r.align),
                d_align: avg(|r| r.d_align),
                psnr_outside: avg(|r| r.psnr_outside),
                masks: masks.len(),
                mask_area: mask_avg(|m| m.area),
                mask_edit_iou: mask_avg(|m| m.edit_iou),
                off_target_iou: mask_avg(|m| m.off_target_iou),
            }
        })
        .collect()
}

/// Mean per-run off-target IoU of one cycle mask kind.
pub fn mean_off_target_iou(run: &RunOutput, kind: MaskKind) -> Option<f64> {
    mean(
        run.masks
            .iter()
            .filter(|m| m.kind == kind && m.scope == MaskScope::Run)
            .filter_map(|m| m.off_target_iou),
    )
}

/// Mean of a record field over successful rows of one method.
pub fn method_mean(run: &RunOutput, method: Method, field: fn(&RunRecord) -> Option<f64>) -> Option<f64> {
    mean(run.records.iter().filter(|r| r.method == method && r.status == Status::Ok).filter_map(field))
}
