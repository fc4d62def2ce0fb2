//! DP-LabelHide: a k-way mixture dominated by one target-label image, with
//! the label kept fixed and isotropic Laplace noise added.

use crate::dataset_io::ClientDataset;
use crate::image::{LabeledImage, Provenance};
use crate::par::{self, Parallelism};
use crate::rng::{stream, tag, SimRng};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    /// Uniform point on the probability simplex, sorted descending.
    SimplexSorted,
    /// Leading weight ~ U[0.5, 0.75], the rest a scaled simplex draw.
    DominantUniform,
}

pub const DOMINANT_RANGE: (f64, f64) = (0.5, 0.75);

/// Non-negative, sums to one, sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights(Vec<f64>);

impl MixWeights {
    /// Accepts a weight vector only if it satisfies the invariants.
    pub fn new(weights: Vec<f64>) -> Option<Self> {
        let ok = !weights.is_empty()
            && weights.iter().all(|&w| w >= 0.0 && w.is_finite())
            && (weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            && weights.windows(2).all(|p| p[0] >= p[1]);
        ok.then_some(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn uniform_simplex(k: usize, rng: &mut SimRng) -> Vec<f64> {
    // normalized unit exponentials are uniform on the simplex
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn sort_desc(v: &mut [f64]) {
    v.sort_by(|a, b| b.total_cmp(a));
}

pub fn sample_mix_weights(k: usize, mode: WeightMode, rng: &mut SimRng) -> MixWeights {
    assert!(k >= 1, "mix width must be at least 1");
    if k == 1 {
        return MixWeights(vec![1.0]);
    }
    let mut w = match mode {
        WeightMode::SimplexSorted => uniform_simplex(k, rng),
        WeightMode::DominantUniform => {
            let lead = rng.random_range(DOMINANT_RANGE.0..=DOMINANT_RANGE.1);
            let mut rest = uniform_simplex(k - 1, rng);
            for r in &mut rest {
                *r *= 1.0 - lead;
            }
            sort_desc(&mut rest);
            let mut w = Vec::with_capacity(k);
            w.push(lead);
            w.extend(rest);
            w
        }
    };
    sort_desc(&mut w);
    // fold the rounding residue into the leading entry
    let residue = 1.0 - w.iter().sum::<f64>();
    w[0] += residue;
    MixWeights(w)
}

/// `d` iid Laplace(0, sigma) values by inverse CDF.
pub fn sample_laplace(d: usize, sigma: f64, rng: &mut SimRng) -> Vec<f32> {
    if sigma == 0.0 {
        return vec![0.0; d];
    }
    (0..d)
        .map(|_| loop {
            let u: f64 = rng.random::<f64>() - 0.5;
            let tail = 1.0 - 2.0 * u.abs();
            if tail > 0.0 {
                break (-sigma * u.signum() * tail.ln()) as f32;
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpMixConfig {
    pub k: usize,
    pub sigma: f64,
    pub weight_mode: WeightMode,
    /// Clamp the noised output to [0, 255]. Off by default.
    pub clamp_output: bool,
}

impl Default for DpMixConfig {
    fn default() -> Self {
        Self {
            k: 4,
            sigma: 50.0,
            weight_mode: WeightMode::DominantUniform,
            clamp_output: false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MixError {
    #[error("no example with label {0} to anchor the mixture")]
    InsufficientLabel(usize),
    #[error("{have} examples cannot form a {k}-way mixture")]
    InsufficientPool { have: usize, k: usize },
    #[error("mix width k must be at least 1")]
    ZeroWidth,
    #[error("sigma must be finite and non-negative, got {0}")]
    BadSigma(String),
}

/// What went into one mixture: source indices (anchor first) and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixTrace {
    pub sources: Vec<usize>,
    pub weights: MixWeights,
    pub noise: Vec<f32>,
}

/// Anchor (uniform among label-`target` examples) followed by `k - 1`
/// distinct other indices drawn without replacement.
pub fn select_sources(
    source: &ClientDataset,
    target: usize,
    k: usize,
    rng: &mut SimRng,
) -> Result<Vec<usize>, MixError> {
    if k == 0 {
        return Err(MixError::ZeroWidth);
    }
    let n = source.len();
    let anchors: Vec<usize> = source
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == target)
        .map(|(i, _)| i)
        .collect();
    if anchors.is_empty() {
        return Err(MixError::InsufficientLabel(target));
    }
    if n < k {
        return Err(MixError::InsufficientPool { have: n, k });
    }
    let anchor = anchors[rng.random_range(0..anchors.len())];
    let mut picked = Vec::with_capacity(k);
    picked.push(anchor);
    for i in index::sample(rng, n - 1, k - 1) {
        picked.push(if i >= anchor { i + 1 } else { i });
    }
    Ok(picked)
}

/// `sum_i w_i * x_i + noise`, accumulated left to right in `f32`.
pub fn compose(images: &[&LabeledImage], weights: &[f64], noise: &[f32]) -> Vec<f32> {
    let d = images[0].pixels.len();
    let mut acc = vec![0.0f32; d];
    for (img, &w) in images.iter().zip(weights) {
        let w = w as f32;
        for (a, &x) in acc.iter_mut().zip(&img.pixels) {
            *a += w * x;
        }
    }
    for (a, &e) in acc.iter_mut().zip(noise) {
        *a += e;
    }
    acc
}

fn validate(cfg: &DpMixConfig) -> Result<(), MixError> {
    if cfg.k == 0 {
        return Err(MixError::ZeroWidth);
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(MixError::BadSigma(cfg.sigma.to_string()));
    }
    Ok(())
}

fn finish(
    source: &ClientDataset,
    target: usize,
    cfg: &DpMixConfig,
    sources: Vec<usize>,
    weights: MixWeights,
    rng: &mut SimRng,
) -> (LabeledImage, MixTrace) {
    let imgs: Vec<&LabeledImage> = sources.iter().map(|&i| &source.examples()[i]).collect();
    let dims = imgs[0].dims;
    let noise = sample_laplace(dims.len(), cfg.sigma, rng);
    let mut pixels = compose(&imgs, weights.as_slice(), &noise);
    if cfg.clamp_output {
        for p in &mut pixels {
            *p = p.clamp(0.0, 255.0);
        }
    }
    let img = LabeledImage::new(dims, pixels, target, Provenance::Mixup);
    (
        img,
        MixTrace {
            sources,
            weights,
            noise,
        },
    )
}

/// One DP-LabelHide pseudo-image with label `target`, plus its trace.
pub fn dp_labelhide_traced(
    source: &ClientDataset,
    target: usize,
    cfg: &DpMixConfig,
    rng: &mut SimRng,
) -> Result<(LabeledImage, MixTrace), MixError> {
    validate(cfg)?;
    let sources = select_sources(source, target, cfg.k, rng)?;
    let weights = sample_mix_weights(cfg.k, cfg.weight_mode, rng);
    Ok(finish(source, target, cfg, sources, weights, rng))
}

pub fn dp_labelhide(
    source: &ClientDataset,
    target: usize,
    cfg: &DpMixConfig,
    rng: &mut SimRng,
) -> Result<LabeledImage, MixError> {
    dp_labelhide_traced(source, target, cfg, rng).map(|(img, _)| img)
}

/// As [`dp_labelhide`] with caller-chosen weights (`weights.len()` is the
/// mix width; `cfg.k` is ignored).
pub fn dp_labelhide_with_weights(
    source: &ClientDataset,
    target: usize,
    cfg: &DpMixConfig,
    weights: &MixWeights,
    rng: &mut SimRng,
) -> Result<LabeledImage, MixError> {
    validate(cfg)?;
    let sources = select_sources(source, target, weights.len(), rng)?;
    Ok(finish(source, target, cfg, sources, weights.clone(), rng).0)
}

/// `count` mixups, image `i` drawn from its own stream of `seed`.
pub fn generate_mixups(
    source: &ClientDataset,
    target: usize,
    cfg: &DpMixConfig,
    count: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<Vec<LabeledImage>, MixError> {
    validate(cfg)?;
    par::map_range(mode, count, |i| {
        let mut rng = stream(seed, &[tag::MIX, i as u64]);
        dp_labelhide(source, target, cfg, &mut rng)
    })
    .into_iter()
    .collect()
}
