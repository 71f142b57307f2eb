//! Edit-mask generation: grid features, cosine similarity, binarisation,
//! quadrant refinement, averaging and resizing.

use alloc::vec::Vec;

use crate::error::{param_err, Error, Result};
use crate::math::sqrt;
use crate::tensor::ImageTensor;

/// Default threshold on the normalised score.
pub const DEFAULT_DELTA: f64 = 0.5;
/// Default cells per side of each quadrant.
pub const DEFAULT_GRID: usize = 4;
/// Normalisation spans at or below this are treated as "no change".
pub const DEFAULT_MIN_SPAN: f64 = 0.05;

/// `m x n x d` grid of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(param_err!("feature grid dimensions must be positive"));
        }
        if data.len() != rows * cols * dim {
            return Err(param_err!("feature buffer length {} != {rows}x{cols}x{dim}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(param_err!("feature grid contains non-finite values"));
        }
        Ok(Self { rows, cols, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Feature vector of cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.cols + j) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Maps an image to a feature grid.
pub trait FeatureExtractor {
    /// `(m, n)` produced for any admissible image.
    fn grid(&self) -> (usize, usize);
    fn extract(&self, img: &ImageTensor) -> Result<FeatureGrid>;
}

/// Cell `k` of `n` covering `len` pixels spans `[k*len/n, (k+1)*len/n)`.
fn cell_bounds(k: usize, n: usize, len: usize) -> (usize, usize) {
    (k * len / n, (k + 1) * len / n)
}

fn check_grid(img: &ImageTensor, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(param_err!("feature grid must be at least 1x1"));
    }
    if img.height() < rows || img.width() < cols {
        return Err(param_err!(
            "image {} smaller than the {rows}x{cols} feature grid",
            img.shape()
        ));
    }
    Ok(())
}

/// Per cell and channel: mean, standard deviation, mean absolute horizontal
/// difference and mean absolute vertical difference (`d = 4 C`). Differences
/// are taken between pixel pairs inside the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchStats {
    pub rows: usize,
    pub cols: usize,
}

impl Default for PatchStats {
    fn default() -> Self {
        Self { rows: DEFAULT_GRID, cols: DEFAULT_GRID }
    }
}

impl FeatureExtractor for PatchStats {
    fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn extract(&self, img: &ImageTensor) -> Result<FeatureGrid> {
        check_grid(img, self.rows, self.cols)?;
        let ch = img.channels();
        let mut data = Vec::with_capacity(self.rows * self.cols * 4 * ch);
        for gi in 0..self.rows {
            let (r0, r1) = cell_bounds(gi, self.rows, img.height());
            for gj in 0..self.cols {
                let (c0, c1) = cell_bounds(gj, self.cols, img.width());
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                let mut feats = alloc::vec![0.0; 4 * ch];
                for c in 0..ch {
                    let mut sum = 0.0;
                    for i in r0..r1 {
                        for j in c0..c1 {
                            sum += img.get(i, j, c);
                        }
                    }
                    let mean = sum / n;
                    let mut var = 0.0;
                    let (mut gh, mut nh, mut gv, mut nv) = (0.0, 0usize, 0.0, 0usize);
                    for i in r0..r1 {
                        for j in c0..c1 {
                            let v = img.get(i, j, c);
                            var += (v - mean) * (v - mean);
                            if j + 1 < c1 {
                                gh += (img.get(i, j + 1, c) - v).abs();
                                nh += 1;
                            }
                            if i + 1 < r1 {
                                gv += (img.get(i + 1, j, c) - v).abs();
                                nv += 1;
                            }
                        }
                    }
                    feats[c] = mean;
                    feats[ch + c] = sqrt(var / n);
                    feats[2 * ch + c] = if nh > 0 { gh / nh as f64 } else { 0.0 };
                    feats[3 * ch + c] = if nv > 0 { gv / nv as f64 } else { 0.0 };
                }
                data.extend_from_slice(&feats);
            }
        }
        FeatureGrid::new(self.rows, self.cols, 4 * ch, data)
    }
}

/// Per cell and channel mean only (`d = C`); the plain-feature ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchMeans {
    pub rows: usize,
    pub cols: usize,
}

impl Default for PatchMeans {
    fn default() -> Self {
        Self { rows: DEFAULT_GRID, cols: DEFAULT_GRID }
    }
}

impl FeatureExtractor for PatchMeans {
    fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn extract(&self, img: &ImageTensor) -> Result<FeatureGrid> {
        check_grid(img, self.rows, self.cols)?;
        let ch = img.channels();
        let mut data = Vec::with_capacity(self.rows * self.cols * ch);
        for gi in 0..self.rows {
            let (r0, r1) = cell_bounds(gi, self.rows, img.height());
            for gj in 0..self.cols {
                let (c0, c1) = cell_bounds(gj, self.cols, img.width());
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                for c in 0..ch {
                    let mut sum = 0.0;
                    for i in r0..r1 {
                        for j in c0..c1 {
                            sum += img.get(i, j, c);
                        }
                    }
                    data.push(sum / n);
                }
            }
        }
        FeatureGrid::new(self.rows, self.cols, ch, data)
    }
}

/// `m x n` cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(param_err!("similarity grid needs {rows}x{cols} values"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// Cellwise cosine; a zero vector on either side gives 0.
pub fn similarity(a: &FeatureGrid, b: &FeatureGrid) -> Result<SimilarityGrid> {
    if (a.rows, a.cols, a.dim) != (b.rows, b.cols, b.dim) {
        return Err(param_err!(
            "feature grids differ: {}x{}x{} vs {}x{}x{}",
            a.rows,
            a.cols,
            a.dim,
            b.rows,
            b.cols,
            b.dim
        ));
    }
    let values = a
        .data
        .chunks_exact(a.dim)
        .zip(b.data.chunks_exact(b.dim))
        .map(|(u, v)| {
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let nu: f64 = u.iter().map(|x| x * x).sum();
            let nv: f64 = v.iter().map(|x| x * x).sum();
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                (dot / (sqrt(nu) * sqrt(nv))).clamp(-1.0, 1.0)
            }
        })
        .collect();
    SimilarityGrid::new(a.rows, a.cols, values)
}

/// How similarity scores become a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// Normalise `|S|` and mark cells above the threshold. This marks
    /// *unchanged* cells.
    AbsSimilarity,
    /// Normalise `1 - S` and mark cells above the threshold (changed cells).
    #[default]
    Dissimilarity,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::AbsSimilarity => "abs-similarity",
            Convention::Dissimilarity => "dissimilarity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "abs-similarity" => Ok(Convention::AbsSimilarity),
            "dissimilarity" => Ok(Convention::Dissimilarity),
            other => Err(param_err!("unknown mask convention `{other}`")),
        }
    }
}

/// Binarisation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub delta: f64,
    pub convention: Convention,
    /// A score range (`max - min`) at or below this yields the all-zero mask.
    pub min_span: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, convention: Convention::default(), min_span: DEFAULT_MIN_SPAN }
    }
}

/// Binary `rows x cols` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EditMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl EditMask {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(param_err!("mask needs {rows}x{cols} cells, got {}", cells.len()));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self { rows, cols, cells: alloc::vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.cells.len() as f64
    }

    /// Intersection over union with a same-sized boolean region; 0 when both
    /// are empty.
    pub fn iou(&self, region: &[bool]) -> Result<f64> {
        if region.len() != self.cells.len() {
            return Err(param_err!("region has {} cells, mask has {}", region.len(), self.cells.len()));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&m, &r) in self.cells.iter().zip(region) {
            inter += (m && r) as usize;
            union += (m || r) as usize;
        }
        Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
    }
}

/// Min-max normalise the per-convention score and threshold it at `delta`.
pub fn binarize(s: &SimilarityGrid, params: &MaskParams) -> Result<EditMask> {
    if !(0.0..=1.0).contains(&params.delta) {
        return Err(param_err!("delta must lie in [0, 1], got {}", params.delta));
    }
    let score: Vec<f64> = match params.convention {
        Convention::AbsSimilarity => s.values.iter().map(|v| v.abs()).collect(),
        Convention::Dissimilarity => s.values.iter().map(|v| 1.0 - v).collect(),
    };
    let min = score.iter().copied().fold(f64::INFINITY, f64::min);
    let max = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span.partial_cmp(&params.min_span) != Some(core::cmp::Ordering::Greater) {
        return Ok(EditMask::filled(s.rows, s.cols, false));
    }
    let cells = score.iter().map(|v| (v - min) / span > params.delta).collect();
    EditMask::new(s.rows, s.cols, cells)
}

/// Features, similarity and binarisation on a whole image pair.
pub fn mask_from_pair<E: FeatureExtractor + ?Sized>(
    a: &ImageTensor,
    b: &ImageTensor,
    extractor: &E,
    params: &MaskParams,
) -> Result<EditMask> {
    b.ensure_shape(a.shape())?;
    let s = similarity(&extractor.extract(a)?, &extractor.extract(b)?)?;
    binarize(&s, params)
}

/// Splits both images into 2x2 quadrants, masks each quadrant pair
/// independently and places the four `m x n` masks into a `2m x 2n` mask.
pub fn grid_refine<E: FeatureExtractor + ?Sized>(
    a: &ImageTensor,
    b: &ImageTensor,
    extractor: &E,
    params: &MaskParams,
) -> Result<EditMask> {
    b.ensure_shape(a.shape())?;
    let (h, w) = (a.height(), a.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(param_err!("quadrant refinement needs even dimensions, got {}", a.shape()));
    }
    let (m, n) = extractor.grid();
    let (qh, qw) = (h / 2, w / 2);
    let mut cells = alloc::vec![false; 4 * m * n];
    for qi in 0..2 {
        for qj in 0..2 {
            let qa = a.crop(qi * qh, qj * qw, qh, qw)?;
            let qb = b.crop(qi * qh, qj * qw, qh, qw)?;
            let mask = mask_from_pair(&qa, &qb, extractor, params)?;
            if (mask.rows, mask.cols) != (m, n) {
                return Err(param_err!("extractor produced {}x{} instead of {m}x{n}", mask.rows, mask.cols));
            }
            for i in 0..m {
                for j in 0..n {
                    cells[(qi * m + i) * 2 * n + qj * n + j] = mask.get(i, j);
                }
            }
        }
    }
    EditMask::new(2 * m, 2 * n, cells)
}

/// Elementwise mean, re-binarised with `mean > threshold`.
pub fn average_masks(masks: &[EditMask], threshold: f64) -> Result<EditMask> {
    let first = masks.first().ok_or_else(|| param_err!("cannot average an empty mask list"))?;
    let mut counts = alloc::vec![0usize; first.cells.len()];
    for m in masks {
        if (m.rows, m.cols) != (first.rows, first.cols) {
            return Err(param_err!("masks differ in shape"));
        }
        for (c, &v) in counts.iter_mut().zip(&m.cells) {
            *c += v as usize;
        }
    }
    let n = masks.len() as f64;
    let cells = counts.iter().map(|&c| c as f64 / n > threshold).collect();
    EditMask::new(first.rows, first.cols, cells)
}

/// Nearest-neighbour upsampling to `height x width`.
pub fn resize_mask(mask: &EditMask, height: usize, width: usize) -> Result<EditMask> {
    if height < mask.rows || width < mask.cols {
        return Err(Error::Parameter(alloc::format!(
            "cannot shrink a {}x{} mask to {height}x{width}",
            mask.rows,
            mask.cols
        )));
    }
    let mut cells = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            cells.push(mask.get(i * mask.rows / height, j * mask.cols / width));
        }
    }
    EditMask::new(height, width, cells)
}
