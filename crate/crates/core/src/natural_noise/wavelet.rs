use crate::rng::SimRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveletBank {
    OrientedGabor,
    Haar,
}

pub const GABOR_WAVELENGTHS: [f64; 3] = [2.0, 4.0, 8.0];

/// A sampled filter in its native size, plus the parameters it was drawn with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wavelet {
    pub size: usize,
    /// Row-major `size * size` taps, zero-mean, unit L2 norm.
    pub taps: Vec<f64>,
    pub orientation: Option<f64>,
    pub wavelength: Option<f64>,
}

impl Wavelet {
    /// 3x3 realization; smaller kernels are zero-padded at the bottom-right.
    pub fn to_3x3(&self) -> [f64; 9] {
        let mut k = [0.0; 9];
        for r in 0..self.size.min(3) {
            for c in 0..self.size.min(3) {
                k[r * 3 + c] = self.taps[r * self.size + c];
            }
        }
        k
    }

    pub fn l2_norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

const HAAR: [[f64; 4]; 3] = [
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, -0.5, -0.5, 0.5],
];

fn gabor(theta: f64, wavelength: f64) -> Vec<f64> {
    let sigma = wavelength / 2.0;
    let mut taps = Vec::with_capacity(9);
    for y in -1..=1 {
        for x in -1..=1 {
            let (x, y) = (f64::from(x), f64::from(y));
            let along = x * theta.cos() + y * theta.sin();
            let envelope = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            taps.push(envelope * (std::f64::consts::TAU * along / wavelength).cos());
        }
    }
    let mean = taps.iter().sum::<f64>() / 9.0;
    taps.iter_mut().for_each(|t| *t -= mean);
    taps
}

fn normalize(mut taps: Vec<f64>) -> Option<Vec<f64>> {
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    taps.iter_mut().for_each(|t| *t /= norm);
    Some(taps)
}

pub fn sample_wavelet(bank: WaveletBank, rng: &mut SimRng) -> Wavelet {
    match bank {
        WaveletBank::Haar => {
            let pick = rng.random_range(0..HAAR.len());
            Wavelet {
                size: 2,
                taps: HAAR[pick].to_vec(),
                orientation: None,
                wavelength: None,
            }
        }
        WaveletBank::OrientedGabor => loop {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let wavelength = GABOR_WAVELENGTHS[rng.random_range(0..GABOR_WAVELENGTHS.len())];
            if let Some(taps) = normalize(gabor(theta, wavelength)) {
                break Wavelet {
                    size: 3,
                    taps,
                    orientation: Some(theta),
                    wavelength: Some(wavelength),
                };
            }
        },
    }
}
