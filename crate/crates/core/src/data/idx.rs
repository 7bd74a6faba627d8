//! The IDX container used to distribute MNIST: a big-endian magic number
//! (`0x00000803` for rank-3 unsigned-byte images, `0x00000801` for rank-1
//! labels), one big-endian `u32` per dimension, then raw bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, ImageShape};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Raw image bytes with `(count, rows, cols)`.
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, ImageShape)> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let count = read_u32(&bytes, 4, path)? as usize;
    let rows = read_u32(&bytes, 8, path)? as usize;
    let cols = read_u32(&bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((bytes[16..expected].to_vec(), count, ImageShape { rows, cols }))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let count = read_u32(&bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads an image/label file pair, scaling pixels from `[0, 255]` to
/// `[0, 1]`. The class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let (pixels, count, shape) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path.as_ref())?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let inputs = Array2::from_shape_vec(
        (count, shape.len()),
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
    )
    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::labeled(inputs, labels, class_count, images_path.display().to_string())?
        .with_shape(shape)
}

/// Writes a dataset back to an IDX pair. Pixels are mapped to bytes with
/// `round(255 * x)`, so `[0, 1]`-scaled data that came from bytes round-trips
/// exactly.
pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let shape = dataset
        .shape
        .ok_or_else(|| Error::ShapeMismatch("IDX images need an image shape".into()))?;
    let labels = dataset.require_labels()?;
    if !dataset.is_unit_range() {
        return Err(Error::InvalidArgument("IDX pixels must lie in [0, 1]".into()));
    }
    if let Some(&big) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::InvalidArgument(format!("label {big} does not fit a byte")));
    }
    let n = dataset.len() as u32;

    let mut img = Vec::with_capacity(16 + dataset.inputs.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(shape.rows as u32).to_be_bytes());
    img.extend_from_slice(&(shape.cols as u32).to_be_bytes());
    img.extend(dataset.inputs.iter().map(|&x| (x * 255.0).round() as u8));

    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(labels.iter().map(|&l| l as u8));

    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
