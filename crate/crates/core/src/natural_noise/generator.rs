//! Untrained multi-scale convolutional generator.
//!
//! A random constant tensor at the base resolution goes through one block per
//! scale: add a gain-scaled noise map, apply a wavelet-initialized 3x3
//! convolution and a leaky ReLU, then upsample (nearest, x2). Filters act at
//! the coarse resolution; a zero-mean filter applied right after a nearest
//! upsample would only respond at block edges. A final 1x1 layer maps to
//! colour channels and each image is min-max normalized to [0, 255].
//! Nothing is ever trained: the state is fixed at construction.

use super::wavelet::{sample_wavelet, Wavelet, WaveletBank};
use crate::image::{Dims, LabeledImage, Provenance};
use crate::par::{self, Parallelism};
use crate::rng::{stream, tag, SimRng};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub out_dims: Dims,
    pub base_resolution: usize,
    pub channels_per_scale: usize,
    pub leaky_slope: f64,
    pub wavelet_bank: WaveletBank,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(out_dims: Dims, seed: u64) -> Self {
        Self {
            out_dims,
            base_resolution: 4,
            channels_per_scale: 8,
            leaky_slope: 0.2,
            wavelet_bank: WaveletBank::OrientedGabor,
            seed,
        }
    }

    /// Smallest `base * 2^s` covering both output sides.
    pub fn working_resolution(&self) -> usize {
        let need = self.out_dims.height.max(self.out_dims.width);
        let mut r = self.base_resolution;
        while r < need {
            r *= 2;
        }
        r
    }

    pub fn num_scales(&self) -> usize {
        (self.working_resolution() / self.base_resolution).trailing_zeros() as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("generator produced a constant image twice in a row")]
    DegenerateImage,
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("power spectrum needs a square image, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("image has no non-DC spectral energy")]
    ZeroImage,
}

/// `y_k = sum_i a[k][i] * (x_i (*) f) + b_k` with one filter `f` for the layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvInit {
    pub wavelet: Wavelet,
    /// 3x3 (or 1x1) cross-correlation kernel derived from `wavelet`.
    pub kernel: Vec<f64>,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Row-major `[out][in]`, drawn N(0, 1).
    pub amplitudes: Vec<f64>,
    /// Drawn U(-0.2, 0.2).
    pub biases: Vec<f64>,
}

impl ConvInit {
    fn sample(
        bank: WaveletBank,
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut SimRng,
    ) -> Self {
        let wavelet = sample_wavelet(bank, rng);
        let kernel = if kernel_size == 1 {
            vec![1.0]
        } else {
            wavelet.to_3x3().to_vec()
        };
        let amplitudes = (0..in_channels * out_channels)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let biases = (0..out_channels)
            .map(|_| rng.random_range(-0.2..0.2))
            .collect();
        Self {
            wavelet,
            kernel,
            kernel_size,
            in_channels,
            out_channels,
            amplitudes,
            biases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLayer {
    pub conv: ConvInit,
    /// Per-channel noise-injection gain, N(0, 1).
    pub noise_gain: Vec<f64>,
}

/// Frozen generator. Shareable across threads; every sample takes its own
/// generator stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub config: GeneratorConfig,
    pub scales: Vec<ScaleLayer>,
    pub to_rgb: ConvInit,
}

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, size: usize) -> Self {
        Self {
            channels,
            size,
            data: vec![0.0; channels * size * size],
        }
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.size * self.size..(c + 1) * self.size * self.size]
    }
}

pub fn init_generator(cfg: &GeneratorConfig) -> Result<GeneratorState, NoiseError> {
    if cfg.base_resolution == 0 || cfg.channels_per_scale == 0 {
        return Err(NoiseError::Config(
            "base_resolution and channels_per_scale must be >= 1".into(),
        ));
    }
    if cfg.out_dims.is_empty() {
        return Err(NoiseError::Config("output dims must be non-empty".into()));
    }
    if !cfg.leaky_slope.is_finite() {
        return Err(NoiseError::Config("leaky slope must be finite".into()));
    }
    let mut rng = stream(cfg.seed, &[tag::NOISE_INIT]);
    let cps = cfg.channels_per_scale;
    let scales = (0..cfg.num_scales())
        .map(|_| {
            let conv = ConvInit::sample(cfg.wavelet_bank, 3, cps, cps, &mut rng);
            let noise_gain = (0..cps).map(|_| StandardNormal.sample(&mut rng)).collect();
            ScaleLayer { conv, noise_gain }
        })
        .collect();
    let rgb = if cfg.out_dims.channels == 1 {
        3
    } else {
        cfg.out_dims.channels
    };
    let to_rgb = ConvInit::sample(cfg.wavelet_bank, 1, cps, rgb, &mut rng);
    Ok(GeneratorState {
        config: *cfg,
        scales,
        to_rgb,
    })
}

fn upsample2(x: &FeatureMap) -> FeatureMap {
    let s = x.size * 2;
    let mut out = FeatureMap::zeros(x.channels, s);
    for c in 0..x.channels {
        let src = x.plane(c);
        for r in 0..s {
            for col in 0..s {
                out.data[(c * s + r) * s + col] = src[(r / 2) * x.size + col / 2];
            }
        }
    }
    out
}

/// Applies one [`ConvInit`] with zero padding and same-size output.
pub fn conv_layer(x: &FeatureMap, conv: &ConvInit) -> FeatureMap {
    assert_eq!(x.channels, conv.in_channels);
    let s = x.size;
    let plane = s * s;
    let mut out = FeatureMap::zeros(conv.out_channels, s);
    let mut mixed = vec![0.0; plane];
    let half = (conv.kernel_size / 2) as isize;
    for k in 0..conv.out_channels {
        // the filter is shared, so mix channels first and filter once
        mixed.iter_mut().for_each(|m| *m = 0.0);
        for i in 0..conv.in_channels {
            let a = conv.amplitudes[k * conv.in_channels + i];
            for (m, &v) in mixed.iter_mut().zip(x.plane(i)) {
                *m += a * v;
            }
        }
        let dst = &mut out.data[k * plane..(k + 1) * plane];
        for r in 0..s as isize {
            for c in 0..s as isize {
                let mut acc = conv.biases[k];
                for dr in -half..=half {
                    for dc in -half..=half {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= s as isize || cc >= s as isize {
                            continue;
                        }
                        let w = conv.kernel
                            [((dr + half) * conv.kernel_size as isize + dc + half) as usize];
                        acc += w * mixed[(rr * s as isize + cc) as usize];
                    }
                }
                dst[(r * s as isize + c) as usize] = acc;
            }
        }
    }
    out
}

/// Raw generator output before normalization, `(rgb channels, working size)`.
pub fn synthesize(state: &GeneratorState, rng: &mut SimRng) -> FeatureMap {
    let cfg = &state.config;
    let slope = cfg.leaky_slope;
    let mut x = FeatureMap::zeros(cfg.channels_per_scale, cfg.base_resolution);
    x.data
        .iter_mut()
        .for_each(|v| *v = StandardNormal.sample(rng));
    for layer in &state.scales {
        let plane = x.size * x.size;
        for (c, &g) in layer.noise_gain.iter().enumerate() {
            for v in &mut x.data[c * plane..(c + 1) * plane] {
                let n: f64 = StandardNormal.sample(rng);
                *v += g * n;
            }
        }
        x = conv_layer(&x, &layer.conv);
        x.data.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        x = upsample2(&x);
    }
    conv_layer(&x, &state.to_rgb)
}

/// An image awaiting a label.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledImage {
    pub dims: Dims,
    pub pixels: Vec<f32>,
}

impl UnlabeledImage {
    pub fn with_label(self, label: usize) -> LabeledImage {
        LabeledImage::new(self.dims, self.pixels, label, Provenance::NaturalNoise)
    }
}

fn to_image(raw: &FeatureMap, dims: Dims) -> Option<UnlabeledImage> {
    let s = raw.size;
    let top = (s - dims.height) / 2;
    let left = (s - dims.width) / 2;
    let gray = dims.channels == 1;
    // min-max over the crop so that every emitted image spans [0, 255]
    let mut vals = Vec::with_capacity(dims.len());
    for r in top..top + dims.height {
        for c in left..left + dims.width {
            if gray {
                let m = (0..raw.channels)
                    .map(|ch| raw.data[(ch * s + r) * s + c])
                    .sum::<f64>()
                    / raw.channels as f64;
                vals.push(m);
            } else {
                for ch in 0..dims.channels {
                    vals.push(raw.data[(ch * s + r) * s + c]);
                }
            }
        }
    }
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater)
        || !hi.is_finite()
        || !lo.is_finite()
    {
        return None;
    }
    let pixels = vals
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0) as f32)
        .collect();
    Some(UnlabeledImage { dims, pixels })
}

/// One natural-noise image. A constant output is redrawn once before failing.
pub fn generate(state: &GeneratorState, rng: &mut SimRng) -> Result<UnlabeledImage, NoiseError> {
    for _ in 0..2 {
        if let Some(img) = to_image(&synthesize(state, rng), state.config.out_dims) {
            return Ok(img);
        }
    }
    Err(NoiseError::DegenerateImage)
}

/// `count` images; image `i` uses stream `(seed, i)`.
pub fn generate_batch(
    state: &GeneratorState,
    count: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<Vec<UnlabeledImage>, NoiseError> {
    par::map_range(mode, count, |i| {
        generate(state, &mut stream(seed, &[tag::NOISE_SAMPLE, i as u64]))
    })
    .into_iter()
    .collect()
}
