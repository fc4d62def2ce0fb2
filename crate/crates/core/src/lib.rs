//! Simulator for label-skewed federated learning.
//!
//! Clients whose local data covers only a few classes fill in missing labels
//! with two kinds of pseudo-images: differentially-private mixups served by
//! peers ([`mixup_dp`]) and training-free "natural noise" from a randomly
//! initialized multi-scale generator ([`natural_noise`]). The bounty protocol
//! in [`balance`] ties the two together, [`fed`] runs FedAvg over the
//! augmented datasets, and [`experiment`] orchestrates full runs and ablation
//! grids.
//!
//! Every stochastic step draws from an explicitly seeded generator, and data
//! parallel loops go through [`par`] so that results do not depend on whether
//! the `parallel` feature is enabled.

pub mod balance;
pub mod dataset_io;
pub mod experiment;
pub mod fed;
pub mod image;
pub mod mixup_dp;
pub mod natural_noise;
pub mod par;
pub mod rng;
pub mod stats;

pub use image::{Dims, LabeledImage, Provenance};
