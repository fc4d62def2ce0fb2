//! Download-free stand-in dataset: one Gaussian blob per class at a fixed
//! position on a ring, plus bounded per-pixel jitter.

use crate::image::{Dims, LabeledImage, Provenance};
use crate::rng::rng_from_seed;
use rand::Rng;

const BACKGROUND: f32 = 30.0;
const PEAK: f32 = 200.0;
const JITTER: f32 = 40.0;

/// Noise-free template for `label`. Channel `c` is scaled so that colour
/// datasets also differ per channel.
pub fn toy_template(label: usize, num_classes: usize, dims: Dims) -> Vec<f32> {
    let (h, w) = (dims.height as f32, dims.width as f32);
    let angle = std::f32::consts::TAU * label as f32 / num_classes.max(1) as f32;
    let ring = 0.3 * h.min(w);
    let cy = (h - 1.0) / 2.0 + ring * angle.sin();
    let cx = (w - 1.0) / 2.0 + ring * angle.cos();
    let spread = (h.min(w) / 8.0).max(1.0);
    let mut out = Vec::with_capacity(dims.len());
    for r in 0..dims.height {
        for col in 0..dims.width {
            let d2 = (r as f32 - cy).powi(2) + (col as f32 - cx).powi(2);
            let blob = (-d2 / (2.0 * spread * spread)).exp();
            for c in 0..dims.channels {
                let gain = 1.0 - 0.25 * ((label + c) % 3) as f32 / 2.0;
                out.push(BACKGROUND + PEAK * gain * blob);
            }
        }
    }
    out
}

/// `n_per_class` images per class, grouped by class, deterministic in `seed`.
/// Pixels are integers in [0, 255].
pub fn make_toy_dataset(
    n_per_class: usize,
    num_classes: usize,
    dims: Dims,
    seed: u64,
) -> Vec<LabeledImage> {
    assert!(n_per_class >= 1, "n_per_class must be at least 1");
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n_per_class * num_classes);
    for label in 0..num_classes {
        let template = toy_template(label, num_classes, dims);
        for _ in 0..n_per_class {
            let pixels = template
                .iter()
                .map(|&t| {
                    (t + rng.random_range(-JITTER..=JITTER))
                        .round()
                        .clamp(0.0, 255.0)
                })
                .collect();
            out.push(LabeledImage::new(dims, pixels, label, Provenance::Real));
        }
    }
    out
}
