use std::path::Path;

use super::{read_file, Dataset};
use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| Error::Truncated {
        offset: bytes.len(),
        expected: offset + 4 - bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn body(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| Error::Truncated {
        offset: bytes.len(),
        expected: offset + len - bytes.len(),
    })
}

/// Returns `(count, rows, cols, pixels)` with pixels scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    check_magic(bytes, IDX_IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = body(bytes, 16, n * rows * cols)?;
    Ok((n, rows, cols, pixels.iter().map(|&p| f64::from(p) / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    Ok(body(bytes, 8, n)?.iter().map(|&l| usize::from(l)).collect())
}

/// Loads an IDX image/label file pair (big-endian headers, one byte per value).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let name = images_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, [1, rows, cols], pixels, labels)
}
