//! Image and mask files.
//!
//! Images are 8-bit PNG or binary PNM (`P6` for three channels, `P5` for
//! one); the format follows the file extension. A value `v` in `[-1, 1]`
//! becomes the byte `floor((v + 1) / 2 * 255 + 0.5)` clamped to `[0, 255]`,
//! and a byte `p` reads back as `p / 255 * 2 - 1`.
//!
//! Masks are written as binary PGM (0 or 255 per pixel) or as JSON: an
//! array of rows, each an array of 0/1 integers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dualcycle_core::maskgen::EditMask;
use dualcycle_core::{ImageTensor, Shape};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{io_err, Error, Result};

pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(p: u8) -> f64 {
    p as f64 / 255.0 * 2.0 - 1.0
}

fn format_of(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm" | "pgm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Format { path: path.into(), msg: "expected a .png, .ppm, .pgm or .pnm extension".into() }),
    }
}

fn save(path: &Path, bytes: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Result<()> {
    let image_err = |source| Error::Image { path: path.into(), source };
    let (w, h) = (width as u32, height as u32);
    match format_of(path)? {
        ImageFormat::Pnm => {
            let subtype = match color {
                ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
                _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
            };
            let file = File::create(path).map_err(io_err(path))?;
            let mut out = BufWriter::new(file);
            PnmEncoder::new(&mut out).with_subtype(subtype).write_image(bytes, w, h, color).map_err(image_err)?;
            out.flush().map_err(io_err(path))
        }
        format => image::save_buffer_with_format(path, bytes, w, h, color, format).map_err(image_err),
    }
}

/// Writes a one- or three-channel image; the extension picks PNG or PNM.
pub fn export_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::Format { path: path.into(), msg: format!("cannot store {c} channels") }),
    };
    let bytes: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v)).collect();
    save(path, &bytes, img.width(), img.height(), color)
}

/// Reads a PNG or PNM file. Grey images give one channel, everything else
/// three (alpha is dropped).
pub fn import_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (bytes, channels) = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
            (img.into_luma8().into_raw(), 1)
        }
        other => (other.into_rgb8().into_raw(), 3),
    };
    Ok(ImageTensor::new(Shape::new(h, w, channels), bytes.into_iter().map(dequantize).collect())?)
}

/// Binary PGM (or PNG), 255 for set cells.
pub fn export_mask(mask: &EditMask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.cells().iter().map(|&c| if c { 255 } else { 0 }).collect();
    save(path, &bytes, mask.cols(), mask.rows(), ExtendedColorType::L8)
}

pub fn mask_rows(mask: &EditMask) -> Vec<Vec<u8>> {
    (0..mask.rows()).map(|i| (0..mask.cols()).map(|j| mask.get(i, j) as u8).collect()).collect()
}

pub fn export_mask_json(mask: &EditMask, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &mask_rows(mask)).map_err(|source| Error::Json { path: path.into(), source })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Reads a JSON mask, or any grey image where nonzero pixels are set.
pub fn import_mask(path: &Path) -> Result<EditMask> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let rows: Vec<Vec<u8>> = crate::config::read_json(path)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Format { path: path.into(), msg: "ragged mask rows".into() });
        }
        let cells = rows.iter().flatten().map(|&v| v != 0).collect();
        return Ok(EditMask::new(rows.len(), cols, cells)?);
    }
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(EditMask::new(h, w, img.into_raw().into_iter().map(|p| p != 0).collect())?)
}

/// Text rendering of a mask, `#` for set cells.
pub fn mask_ascii(mask: &EditMask) -> String {
    let mut s = String::with_capacity(mask.rows() * (mask.cols() + 1));
    for i in 0..mask.rows() {
        s.extend((0..mask.cols()).map(|j| if mask.get(i, j) { '#' } else { '.' }));
        s.push('\n');
    }
    s
}
