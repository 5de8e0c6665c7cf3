//! IDX reader for MNIST-style image and label files (big-endian headers).

use std::path::Path;

use super::Dataset;
use crate::error::{DecodeError, DecodeErrorKind, Error, Result};
use crate::wire::Reader;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8]) -> std::result::Result<IdxImages, DecodeError> {
    let mut r = Reader::new(bytes);
    let magic = r.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(r.error(0, DecodeErrorKind::BadMagic { found: magic }));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let at = r.offset();
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| r.error(at, DecodeErrorKind::Invalid("image dimensions overflow")))?;
    let pixels = r.take(len)?.to_vec();
    r.finish()?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, DecodeError> {
    let mut r = Reader::new(bytes);
    let magic = r.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(r.error(0, DecodeErrorKind::BadMagic { found: magic }));
    }
    let count = r.u32_be()? as usize;
    let labels = r.take(count)?.to_vec();
    r.finish()?;
    Ok(labels)
}

/// Pairs an image file with a label file. Pixels are scaled by 1/255.
pub fn dataset_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.count != labels.len() {
        // the count field of the label file sits at byte 4
        return Err(DecodeError::new(4, DecodeErrorKind::Invalid("label count differs from image count")).into());
    }
    let dim = images.rows * images.cols;
    let features = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = labels.into_iter().map(usize::from).collect();
    Dataset::new(features, labels, dim)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    dataset_from_bytes(&images, &labels).map_err(|e| match e {
        Error::Decode(d) => Error::Workload(format!(
            "{} / {}: {d}",
            images_path.display(),
            labels_path.display()
        )),
        other => other,
    })
}

/// Serializes images and labels in IDX form. Used to write fixtures.
pub fn encode_idx(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
