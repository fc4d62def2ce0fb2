//! CIFAR-10 binary batches: 1 label byte then 1024 R, 1024 G, 1024 B bytes.

use super::DatasetError;
use crate::image::{Dims, LabeledImage, Provenance};
use std::path::Path;

pub const CIFAR10_RECORD_LEN: usize = 1 + 32 * 32 * 3;
const PLANE: usize = 32 * 32;

pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>, DatasetError> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_LEN) {
        return Err(DatasetError::BadRecordLength(bytes.len()));
    }
    bytes
        .chunks_exact(CIFAR10_RECORD_LEN)
        .enumerate()
        .map(|(index, rec)| {
            let label = rec[0] as usize;
            if label > 9 {
                return Err(DatasetError::LabelOutOfRange {
                    index,
                    label,
                    num_classes: 10,
                });
            }
            let planes = &rec[1..];
            let mut pixels = Vec::with_capacity(PLANE * 3);
            for p in 0..PLANE {
                for c in 0..3 {
                    pixels.push(f32::from(planes[c * PLANE + p]));
                }
            }
            Ok(LabeledImage::new(
                Dims::CIFAR10,
                pixels,
                label,
                Provenance::Real,
            ))
        })
        .collect()
}

/// Inverse of [`parse_cifar10`] for integer-valued images.
pub fn encode_cifar10(images: &[LabeledImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * CIFAR10_RECORD_LEN);
    for img in images {
        assert_eq!(img.dims, Dims::CIFAR10);
        out.push(img.label as u8);
        for c in 0..3 {
            for p in 0..PLANE {
                out.push(img.pixels[p * 3 + c].round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Loads `data_batch_{1..5}.bin` (train) or `test_batch.bin` from a directory.
pub fn load_cifar10_dir(dir: &Path, train: bool) -> Result<Vec<LabeledImage>, DatasetError> {
    let files: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".to_string()]
    };
    let mut out = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(|e| DatasetError::io(&path, e))?;
        out.extend(parse_cifar10(&bytes)?);
    }
    Ok(out)
}
