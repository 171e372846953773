use std::path::Path;

use super::{read_file, Dataset};
use crate::error::{Error, Result};

/// One label byte followed by 1024 red, 1024 green and 1024 blue bytes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Parses a buffer of CIFAR-10 binary records into `(pixels, labels)`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<f64>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::RecordSize {
            size: bytes.len(),
            record: CIFAR_RECORD_LEN,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(usize::from(record[0]));
        pixels.extend(record[1..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok((pixels, labels))
}

pub fn load_cifar10_binary<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Empty("CIFAR-10 file list"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let (p, l) = parse_cifar10(&read_file(path.as_ref())?)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Dataset::new("cifar10", [3, 32, 32], pixels, labels)
}
