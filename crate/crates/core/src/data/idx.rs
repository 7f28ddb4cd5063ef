use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                offset as u64,
                format!("truncated while reading {what} ({} bytes in file)", bytes.len()),
            )
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file: magic, count, rows, cols, then `count*rows*cols` bytes.
fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::format(8, "image dimensions must be positive"));
    }
    let need = 16 + n * dim;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated image data: expected {need} bytes, found {}", bytes.len()),
        ));
    }
    Ok((n, dim, bytes[16..need].to_vec()))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n = read_u32(bytes, 4, "label count")? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated label data: expected {need} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes[8..need].to_vec())
}

/// Loads an IDX image/label pair; pixels are scaled to `[0, 1]` by `/255`.
///
/// The class count is one past the largest label present.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (n, dim, pixels) = parse_images(&read_file(images_path)?)?;
    let labels = parse_labels(&read_file(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::format(
            4,
            format!("{n} images but {} labels", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::Data("IDX files contain no samples".into()));
    }
    let inputs = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, dim, labels, num_classes, split)
}

/// Writes an IDX image file; `pixels` holds `count * rows * cols` bytes.
pub fn write_idx_images(path: &Path, rows: u32, cols: u32, pixels: &[u8]) -> Result<()> {
    let dim = (rows * cols) as usize;
    if dim == 0 || !pixels.len().is_multiple_of(dim) {
        return Err(Error::Data(format!(
            "{} pixels do not form {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&((pixels.len() / dim) as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Exports as an IDX pair with one `1 x dim` image per sample.
    ///
    /// Values are clamped to `[0, 1]` and quantized to bytes, so only unit-scaled
    /// datasets survive the trip without loss beyond quantization.
    pub fn write_idx(&self, images_path: &Path, labels_path: &Path) -> Result<()> {
        if self.num_classes > 256 {
            return Err(Error::Data("IDX labels hold at most 256 classes".into()));
        }
        let pixels: Vec<u8> = self
            .inputs
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let labels: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        write_idx_images(images_path, 1, self.dim as u32, &pixels)?;
        write_idx_labels(labels_path, &labels)
    }
}
