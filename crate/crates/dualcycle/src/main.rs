use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dualcycle::config::{ExperimentConfig, TupleConfig, WorldSource};
use dualcycle::harness::{compare_modes, run_experiment, summarize, Experiment, RunOutput};
use dualcycle::io::{export_image, export_mask, export_mask_json, import_image, mask_ascii};
use dualcycle::report::{write_run, write_table};
use dualcycle::resolve_output;
use dualcycle_core::editing::BlendMode;
use dualcycle_core::maskgen::{
    grid_refine, mask_from_pair, resize_mask, Convention, FeatureExtractor, MaskParams, PatchMeans, PatchStats,
    DEFAULT_DELTA, DEFAULT_GRID, DEFAULT_MIN_SPAN,
};
use dualcycle_core::world::{render_scene, SceneSpec};
use dualcycle_core::{Condition, Shape};

/// Dual-cycle diffusion editing on a synthetic attribute world.
#[derive(Parser)]
#[command(name = "dualcycle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full experiment: cycles, averaged masks, guided edits, scores and selection.
    Run(SweepArgs),
    /// Mode comparison: biased/unbiased masks, rich/plain features, reference modes.
    Ablate(SweepArgs),
    /// Edit mask between two images.
    Mask(MaskArgs),
    /// Render a scene to an image.
    Render(RenderArgs),
}

/// Overrides for experiment config fields. Relative output paths resolve
/// under `$DUALCYCLE_OUT` when it is set.
#[derive(Args)]
struct SweepArgs {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// World config (JSON) replacing the experiment's world.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Output directory [default: config `output_dir`, else `dualcycle-out`].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Edit tuple `ID/SOURCE/C_SRC/C_TGT`, e.g.
    /// `cat/color=gray,accessory=none,ears=pointed/accessory=none/accessory=scarf`.
    /// Repeatable; replaces the configured tuples.
    #[arg(long = "tuple")]
    tuples: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    dec_scales: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    noise_steps: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    enc_scale: Option<f64>,
    /// `dissimilarity` or `abs-similarity`.
    #[arg(long)]
    convention: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    min_span: Option<f64>,
    /// `deterministic` or `stochastic`.
    #[arg(long)]
    blend_mode: Option<String>,
    /// Add biased-mask edit rows (`run` only).
    #[arg(long)]
    ablation: bool,
    /// Write PPM copies of every PNG.
    #[arg(long)]
    ppm: bool,
    /// Worker threads [default: one per core].
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_tuple(text: &str) -> Result<TupleConfig> {
    let parts: Vec<&str> = text.split('/').collect();
    let [id, source, c_src, c_tgt] = parts[..] else {
        bail!("tuple `{text}` is not ID/SOURCE/C_SRC/C_TGT");
    };
    Ok(TupleConfig {
        id: id.into(),
        source: source.into(),
        c_src: c_src.into(),
        c_tgt: c_tgt.into(),
        off_target: None,
    })
}

impl SweepArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(w) = &self.world {
            cfg.world = WorldSource::Path(w.clone());
        }
        if !self.tuples.is_empty() {
            cfg.tuples = self.tuples.iter().map(|t| parse_tuple(t)).collect::<Result<_>>()?;
        }
        if let Some(v) = &self.dec_scales {
            cfg.sweep.dec_scales = v.clone();
        }
        if let Some(v) = &self.noise_steps {
            cfg.sweep.noise_steps = v.clone();
        }
        if let Some(v) = &self.ks {
            cfg.sweep.ks = v.clone();
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.enc_scale {
            cfg.enc_scale = v;
        }
        if let Some(v) = &self.convention {
            cfg.mask.convention = Convention::parse(v)?;
        }
        if let Some(v) = self.delta {
            cfg.mask.delta = v;
        }
        if let Some(v) = self.min_span {
            cfg.mask.min_span = v;
        }
        if let Some(v) = &self.blend_mode {
            cfg.blend_mode = BlendMode::parse(v)?;
        }
        cfg.ablation |= self.ablation;
        cfg.ppm |= self.ppm;
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        Ok(cfg)
    }

    fn prepare(&self) -> Result<(Experiment, PathBuf)> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        let cfg = self.config()?;
        let dir = resolve_output(cfg.output_dir.as_deref(), "dualcycle-out");
        Ok((Experiment::new(cfg).context("invalid experiment")?, dir))
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn report_failures(out: &RunOutput, dir: &Path) -> ExitCode {
    let failed = out.failures();
    println!("wrote {}", dir.display());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} failed rows; see the error column of records.csv and masks.csv");
        ExitCode::FAILURE
    }
}

fn run(args: &SweepArgs) -> Result<ExitCode> {
    let (exp, dir) = args.prepare()?;
    let out = run_experiment(&exp);
    write_run(&exp, &out, &dir)?;
    println!("{:<16} {:<20} {:>9} {:>9} {:>9} {:>9}", "tuple", "method", "psnr", "ssim", "d_align", "best");
    for row in summarize(&out) {
        println!(
            "{:<16} {:<20} {:>9} {:>9} {:>9} {:>9}",
            row.tuple,
            row.method.name(),
            fmt(row.psnr),
            fmt(row.ssim),
            fmt(row.d_align),
            fmt(row.best_d_align)
        );
    }
    Ok(report_failures(&out, &dir))
}

fn ablate(args: &SweepArgs) -> Result<ExitCode> {
    let (exp, dir) = args.prepare()?;
    let cmp = compare_modes(&exp);
    write_run(&exp, &cmp.run, &dir)?;
    write_table(&cmp.table, &dir)?;
    println!(
        "{:<20} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "mode", "feat", "psnr", "ssim", "d_align", "psnr_out", "offt_iou"
    );
    for row in &cmp.table {
        println!(
            "{:<20} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
            row.mode.name(),
            row.features,
            fmt(row.psnr),
            fmt(row.ssim),
            fmt(row.d_align),
            fmt(row.psnr_outside),
            fmt(row.off_target_iou)
        );
    }
    Ok(report_failures(&cmp.run, &dir))
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    /// Per-cell mean, spread and gradient statistics.
    Rich,
    /// Per-cell channel means.
    Plain,
}

#[derive(Args)]
struct MaskArgs {
    /// First image (PNG or PNM).
    a: PathBuf,
    /// Second image, same size.
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = Features::Rich)]
    features: Features,
    /// Cells per side of each quadrant (of the whole image with --no-refine).
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Mask the whole image at once instead of per quadrant.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, default_value = "dissimilarity")]
    convention: String,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_SPAN)]
    min_span: f64,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// File stem of the written `.pgm` and `.json`.
    #[arg(long, default_value = "mask")]
    name: String,
}

fn mask(args: &MaskArgs) -> Result<ExitCode> {
    let a = import_image(&args.a)?;
    let b = import_image(&args.b)?;
    let params =
        MaskParams { delta: args.delta, convention: Convention::parse(&args.convention)?, min_span: args.min_span };
    let g = args.grid;
    let extractor: Box<dyn FeatureExtractor> = match args.features {
        Features::Rich => Box::new(PatchStats { rows: g, cols: g }),
        Features::Plain => Box::new(PatchMeans { rows: g, cols: g }),
    };
    let m = if args.no_refine {
        mask_from_pair(&a, &b, extractor.as_ref(), &params)?
    } else {
        grid_refine(&a, &b, extractor.as_ref(), &params)?
    };
    let dir = resolve_output(args.out.as_deref(), ".");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    export_mask(&resize_mask(&m, a.height(), a.width())?, &dir.join(format!("{}.pgm", args.name)))?;
    export_mask_json(&m, &dir.join(format!("{}.json", args.name)))?;
    print!("{}", mask_ascii(&m));
    println!("area {:.4}", m.area_fraction());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct RenderArgs {
    /// Full attribute assignment, e.g. `color=gray,accessory=scarf,ears=folded`.
    #[arg(long)]
    scene: String,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Output image; `.png` or `.ppm`/`.pgm`.
    #[arg(short, long, default_value = "scene.png")]
    output: PathBuf,
}

fn render(args: &RenderArgs) -> Result<ExitCode> {
    let spec = SceneSpec::new(Condition::parse(&args.scene)?, Shape::new(args.height, args.width, args.channels));
    let img = render_scene(&spec)?;
    let path = resolve_output(Some(&args.output), "scene.png");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    export_image(&img, &path)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(a) => run(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Mask(a) => mask(&a),
        Command::Render(a) => render(&a),
    }
}
