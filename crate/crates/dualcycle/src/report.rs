//! Files written for a run. Inside the output directory:
//!
//! - `records.csv`: one row per edit, columns as in [`RunRecord`].
//! - `masks.csv`: one row per mask, columns as in [`MaskRecord`].
//! - `summary.csv`: one row per tuple and method ([`SummaryRow`]).
//! - `ablation.csv`: one row per mode ([`ModeSummary`]), comparison runs only.
//! - `config.json`: the experiment config with the world inlined.
//! - `<tuple>/source.png`, `<tuple>/template.png`: the source scene and the
//!   rendered target scene.
//! - `<tuple>/mask_<kind>.pgm` at pixel resolution and
//!   `<tuple>/mask_<kind>.json` at mask resolution, for every mask an edit
//!   used.
//! - `<tuple>/best_<method>.png`: the selected edit of each method.
//!
//! With `ppm` set every PNG gets a `.ppm` sibling. Row order follows the
//! job order (tuple, scale, noise step, trial, method, k), so equal configs
//! give byte-identical files.
//!
//! [`RunRecord`]: crate::harness::RunRecord
//! [`MaskRecord`]: crate::harness::MaskRecord
//! [`SummaryRow`]: crate::harness::SummaryRow

use std::path::{Path, PathBuf};

use dualcycle_core::maskgen::resize_mask;
use dualcycle_core::ImageTensor;
use serde::Serialize;

use crate::config::{ExperimentConfig, WorldSource};
use crate::error::{io_err, Error, Result};
use crate::harness::{summarize, Experiment, ModeSummary, RunOutput};
use crate::io::{export_image, export_mask, export_mask_json};

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Collects written paths relative to the output directory.
struct Sink<'a> {
    root: &'a Path,
    ppm: bool,
    written: Vec<PathBuf>,
}

impl Sink<'_> {
    fn path(&mut self, rel: impl Into<PathBuf>) -> PathBuf {
        let rel = rel.into();
        let full = self.root.join(&rel);
        self.written.push(rel);
        full
    }

    fn image(&mut self, dir: &str, stem: &str, img: &ImageTensor) -> Result<()> {
        export_image(img, &self.path(format!("{dir}/{stem}.png")))?;
        if self.ppm {
            export_image(img, &self.path(format!("{dir}/{stem}.ppm")))?;
        }
        Ok(())
    }
}

fn resolved_config(exp: &Experiment) -> ExperimentConfig {
    ExperimentConfig {
        world: WorldSource::Inline(exp.world_config.clone()),
        output_dir: None,
        ..exp.config.clone()
    }
}

/// Writes everything but `ablation.csv`; returns the files written,
/// relative to `dir`.
pub fn write_run(exp: &Experiment, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut sink = Sink { root: dir, ppm: exp.config.ppm, written: Vec::new() };
    write_csv(&out.records, &sink.path("records.csv"))?;
    write_csv(&out.masks, &sink.path("masks.csv"))?;
    write_csv(&summarize(out), &sink.path("summary.csv"))?;
    let cfg_path = sink.path("config.json");
    let json = serde_json::to_string_pretty(&resolved_config(exp))
        .map_err(|source| Error::Json { path: cfg_path.clone(), source })?;
    std::fs::write(&cfg_path, json + "\n").map_err(io_err(&cfg_path))?;

    for t in &out.tuples {
        let tdir = dir.join(&t.id);
        std::fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        if let (Some(src), Some(tpl)) = (&t.source, &t.template) {
            sink.image(&t.id, "source", src)?;
            sink.image(&t.id, "template", tpl)?;
        }
        for (kind, mask) in &t.masks {
            let (h, w) = t.source.as_ref().map_or((mask.rows(), mask.cols()), |s| (s.height(), s.width()));
            let pixels = resize_mask(mask, h, w)?;
            export_mask(&pixels, &sink.path(format!("{}/mask_{}.pgm", t.id, kind.name())))?;
            export_mask_json(mask, &sink.path(format!("{}/mask_{}.json", t.id, kind.name())))?;
        }
        for (method, img) in &t.best {
            sink.image(&t.id, &format!("best_{}", method.name()), img)?;
        }
    }
    Ok(sink.written)
}

pub fn write_table(table: &[ModeSummary], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("ablation.csv");
    write_csv(table, &path)?;
    Ok(path)
}
