//! IDX (MNIST-style) binary files: big-endian magic, big-endian u32 sizes, u8 payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    let b = bytes.get(at..end).ok_or(Error::Length {
        expected: end,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let got = read_u32(bytes, 0)?;
    if got != want {
        return Err(Error::Format(format!(
            "bad IDX magic {:02x?}, expected {want:#010x}",
            &bytes[..4]
        )));
    }
    Ok(())
}

/// Images as `[1×rows×cols]` tensors scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let plane = rows * cols;
    let expected = 16 + count * plane;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    (0..count)
        .map(|i| {
            let px = &bytes[16 + i * plane..16 + (i + 1) * plane];
            Tensor::new(
                vec![1, rows, cols],
                px.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<(Tensor, u8)>> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images.into_iter().zip(labels).collect())
}

/// Encodes `[1×rows×cols]` images, quantizing to u8.
pub fn write_idx_images(images: &[Tensor]) -> Result<Vec<u8>> {
    let (rows, cols) = match images.first() {
        Some(t) if t.shape().len() == 3 => (t.shape()[1], t.shape()[2]),
        Some(t) => return Err(Error::dim("write_idx_images", t.shape(), &[1, 0, 0])),
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.shape() != [1, rows, cols] {
            return Err(Error::dim("write_idx_images", img.shape(), &[1, rows, cols]));
        }
        out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
