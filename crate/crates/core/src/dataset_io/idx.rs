//! IDX container (MNIST). Big-endian header, unsigned-byte payload.
//!
//! ```text
//! 00 00 08 03 | n | rows | cols | n*rows*cols bytes     images
//! 00 00 08 01 | n | n bytes                             labels
//! ```

use super::DatasetError;
use crate::image::{Dims, LabeledImage, Provenance};
use std::path::Path;

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxMeta {
    pub magic: u32,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub meta: IdxMeta,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn shape(&self) -> &[usize] {
        &self.meta.dims
    }
}

fn read_be_u32(bytes: &[u8], at: usize) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DatasetError::TruncatedFile {
            needed: at + 4,
            have: bytes.len(),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DatasetError> {
    let magic = read_be_u32(bytes, 0)?;
    let ndim = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => return Err(DatasetError::BadMagic(other)),
    };
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(read_be_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(DatasetError::DimensionOverflow)?;
    let needed = header
        .checked_add(count)
        .ok_or(DatasetError::DimensionOverflow)?;
    if bytes.len() < needed {
        return Err(DatasetError::TruncatedFile {
            needed,
            have: bytes.len(),
        });
    }
    Ok(IdxTensor {
        meta: IdxMeta { magic, dims },
        data: bytes[header..needed].to_vec(),
    })
}

pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.meta.dims.len() + tensor.data.len());
    out.extend_from_slice(&tensor.meta.magic.to_be_bytes());
    for &d in &tensor.meta.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

/// Joins an IDX image file and label file into labeled images.
pub fn idx_to_images(
    images: &IdxTensor,
    labels: &IdxTensor,
    num_classes: usize,
) -> Result<Vec<LabeledImage>, DatasetError> {
    if images.meta.magic != MAGIC_IMAGES {
        return Err(DatasetError::BadMagic(images.meta.magic));
    }
    if labels.meta.magic != MAGIC_LABELS {
        return Err(DatasetError::BadMagic(labels.meta.magic));
    }
    let (n, rows, cols) = (
        images.meta.dims[0],
        images.meta.dims[1],
        images.meta.dims[2],
    );
    if labels.meta.dims[0] != n {
        return Err(DatasetError::CountMismatch {
            images: n,
            labels: labels.meta.dims[0],
        });
    }
    let dims = Dims::new(rows, cols, 1);
    images
        .data
        .chunks_exact(rows * cols)
        .zip(&labels.data)
        .enumerate()
        .map(|(index, (px, &label))| {
            let label = label as usize;
            if label >= num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    index,
                    label,
                    num_classes,
                });
            }
            Ok(LabeledImage::new(
                dims,
                px.iter().map(|&b| f32::from(b)).collect(),
                label,
                Provenance::Real,
            ))
        })
        .collect()
}

/// Loads the MNIST train or test split from a directory holding the four
/// standard uncompressed files.
pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<Vec<LabeledImage>, DatasetError> {
    let prefix = if train { "train" } else { "t10k" };
    let read = |stem: &str| -> Result<Vec<u8>, DatasetError> {
        let dotted = dir.join(format!("{prefix}-{stem}"));
        let plain = dir.join(format!("{prefix}-{}", stem.replacen('.', "-", 1)));
        let path = if dotted.exists() { dotted } else { plain };
        std::fs::read(&path).map_err(|e| DatasetError::io(&path, e))
    };
    let images = parse_idx(&read("images.idx3-ubyte")?)?;
    let labels = parse_idx(&read("labels.idx1-ubyte")?)?;
    idx_to_images(&images, &labels, 10)
}
