//! IDX container (the MNIST distribution format), raw or gzip-compressed.

use std::io::Read;
use std::path::Path;

use super::{DataError, LabeledImageSet};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxFile {
    /// Pixels scaled into [0,1], samples concatenated row-major.
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<f64> },
    Labels(Vec<u8>),
}

fn word(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|w| u32::from_be_bytes([w[0], w[1], w[2], w[3]]))
        .ok_or(DataError::Length { expected: at + 4, actual: bytes.len() })
}

fn body(bytes: &[u8], start: usize, len: usize) -> Result<&[u8], DataError> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| DataError::Format("IDX dimensions overflow".into()))?;
    if bytes.len() < end {
        return Err(DataError::Length { expected: end, actual: bytes.len() });
    }
    if bytes.len() > end {
        return Err(DataError::Format(format!("{} trailing bytes after IDX payload", bytes.len() - end)));
    }
    Ok(&bytes[start..end])
}

/// Parses an IDX stream; a leading `1f 8b` selects gzip decompression first.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile, DataError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        flate2::read::GzDecoder::new(bytes).read_to_end(&mut raw)?;
        return parse_idx(&raw);
    }
    match word(bytes, 0)? {
        LABEL_MAGIC => {
            let n = word(bytes, 4)? as usize;
            Ok(IdxFile::Labels(body(bytes, 8, n)?.to_vec()))
        }
        IMAGE_MAGIC => {
            let (n, r, c) = (word(bytes, 4)? as usize, word(bytes, 8)? as usize, word(bytes, 12)? as usize);
            let len = n
                .checked_mul(r)
                .and_then(|v| v.checked_mul(c))
                .ok_or_else(|| DataError::Format("IDX dimensions overflow".into()))?;
            let pixels = body(bytes, 16, len)?.iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(IdxFile::Images { count: n, rows: r, cols: c, pixels })
        }
        m => Err(DataError::Format(format!("bad IDX magic {m:#010x}"))),
    }
}

/// Uncompressed IDX bytes; inverse of [`parse_idx`] on uncompressed input.
pub fn serialize_idx(file: &IdxFile) -> Vec<u8> {
    let mut out = Vec::new();
    match file {
        IdxFile::Labels(l) => {
            out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
            out.extend_from_slice(&(l.len() as u32).to_be_bytes());
            out.extend_from_slice(l);
        }
        IdxFile::Images { count, rows, cols, pixels } => {
            out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
            for d in [count, rows, cols] {
                out.extend_from_slice(&(*d as u32).to_be_bytes());
            }
            out.extend(pixels.iter().map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

pub fn read_idx(path: &Path) -> Result<IdxFile, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_idx(&bytes)
}

/// Pairs an image file with a label file; `class_count` defaults to `max label + 1`.
pub fn load_idx_pair(
    images: &Path,
    labels: &Path,
    class_count: Option<usize>,
) -> Result<LabeledImageSet, DataError> {
    let IdxFile::Images { count, rows, cols, pixels } = read_idx(images)? else {
        return Err(DataError::Format(format!("{} is not an IDX image file", images.display())));
    };
    let IdxFile::Labels(l) = read_idx(labels)? else {
        return Err(DataError::Format(format!("{} is not an IDX label file", labels.display())));
    };
    if l.len() != count {
        return Err(DataError::Length { expected: count, actual: l.len() });
    }
    let stride = rows * cols;
    let images = (0..count).map(|i| pixels[i * stride..(i + 1) * stride].to_vec()).collect();
    let labels: Vec<usize> = l.into_iter().map(usize::from).collect();
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledImageSet::new(rows, cols, images, labels, classes)
}
