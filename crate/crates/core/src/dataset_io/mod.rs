//! Dataset ingestion, the toy generator, and client partitioning.

mod cifar;
mod idx;
mod partition;
mod toy;

pub use cifar::{encode_cifar10, load_cifar10_dir, parse_cifar10, CIFAR10_RECORD_LEN};
pub use idx::{
    encode_idx, idx_to_images, load_mnist_dir, parse_idx, IdxMeta, IdxTensor, MAGIC_IMAGES,
    MAGIC_LABELS,
};
pub use partition::{
    class_skew_assignment, dirichlet_proportions, partition, split_counts, write_manifest,
    PartitionScheme, PartitionSpec,
};
pub use toy::{make_toy_dataset, toy_template};

use crate::image::{LabeledImage, Provenance};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("bad IDX magic number {0:#010x}")]
    BadMagic(u32),
    #[error("file truncated: need {needed} bytes, have {have}")]
    TruncatedFile { needed: usize, have: usize },
    #[error("IDX dimensions overflow addressable size")]
    DimensionOverflow,
    #[error("CIFAR-10 payload of {0} bytes is not a whole number of 3073-byte records")]
    BadRecordLength(usize),
    #[error("label {label} out of range for {num_classes} classes (record {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("infeasible partition: {0}")]
    InfeasibleSpec(String),
    #[error("image and label files disagree: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl DatasetError {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// One client's local data. The histogram is maintained on every insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    examples: Vec<LabeledImage>,
    histogram: Vec<usize>,
}

impl ClientDataset {
    pub fn new(client_id: usize, num_classes: usize) -> Self {
        Self {
            client_id,
            examples: Vec::new(),
            histogram: vec![0; num_classes],
        }
    }

    pub fn from_examples(
        client_id: usize,
        num_classes: usize,
        examples: Vec<LabeledImage>,
    ) -> Self {
        let mut ds = Self::new(client_id, num_classes);
        ds.extend(examples);
        ds
    }

    pub fn push(&mut self, img: LabeledImage) {
        assert!(
            img.label < self.histogram.len(),
            "label {} out of range",
            img.label
        );
        self.histogram[img.label] += 1;
        self.examples.push(img);
    }

    pub fn extend<I: IntoIterator<Item = LabeledImage>>(&mut self, iter: I) {
        for img in iter {
            self.push(img);
        }
    }

    pub fn examples(&self) -> &[LabeledImage] {
        &self.examples
    }

    pub fn histogram(&self) -> &[usize] {
        &self.histogram
    }

    pub fn num_classes(&self) -> usize {
        self.histogram.len()
    }

    pub fn count(&self, label: usize) -> usize {
        self.histogram.get(label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn max_class_count(&self) -> usize {
        self.histogram.iter().copied().max().unwrap_or(0)
    }

    /// Number of labels with at least one example.
    pub fn support(&self) -> usize {
        self.histogram.iter().filter(|&&c| c > 0).count()
    }

    pub fn count_by_provenance(&self, provenance: Provenance) -> usize {
        self.examples
            .iter()
            .filter(|e| e.provenance == provenance)
            .count()
    }

    /// Recounts labels from scratch and compares with the stored histogram.
    pub fn histogram_is_consistent(&self) -> bool {
        let mut h = vec![0usize; self.histogram.len()];
        for e in &self.examples {
            h[e.label] += 1;
        }
        h == self.histogram
    }

    /// Only the real (non-pseudo) examples.
    pub fn real_only(&self) -> ClientDataset {
        ClientDataset::from_examples(
            self.client_id,
            self.num_classes(),
            self.examples
                .iter()
                .filter(|e| e.provenance == Provenance::Real)
                .cloned()
                .collect(),
        )
    }
}

/// Global per-label counts of a dataset.
pub fn label_histogram(images: &[LabeledImage], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for img in images {
        h[img.label] += 1;
    }
    h
}
