//! Radially averaged power spectrum and its log-log slope.

use super::generator::NoiseError;
use crate::image::LabeledImage;
use crate::stats::ols_slope;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// In-place 2-D FFT of a square row-major grid.
pub fn fft2(data: &mut [Complex<f64>], n: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
}

/// Mean |F|^2 per integer radius `0..=n/2` (rounded Euclidean frequency).
pub fn radial_power(gray: &[f64], n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = gray.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, n);
    let bins = n / 2 + 1;
    let mut sum = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    let signed = |i: usize| {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    for r in 0..n {
        for c in 0..n {
            let radius = (signed(r).hypot(signed(c))).round() as usize;
            if radius < bins {
                sum[radius] += buf[r * n + c].norm_sqr();
                cnt[radius] += 1;
            }
        }
    }
    sum.iter()
        .zip(&cnt)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Channel mean of an HWC image.
pub fn grayscale(img: &LabeledImage) -> Vec<f64> {
    img.pixels
        .chunks_exact(img.dims.channels)
        .map(|px| px.iter().map(|&v| f64::from(v)).sum::<f64>() / px.len() as f64)
        .collect()
}

/// Slope of log power against log frequency over radii `[2, n/2)`.
pub fn power_spectrum_slope(img: &LabeledImage) -> Result<f64, NoiseError> {
    let (h, w) = (img.dims.height, img.dims.width);
    if h != w {
        return Err(NoiseError::NotSquare(h, w));
    }
    slope_of_gray(&grayscale(img), h)
}

pub fn slope_of_gray(gray: &[f64], n: usize) -> Result<f64, NoiseError> {
    let power = radial_power(gray, n);
    if power[1..].iter().all(|&p| p <= 1e-12 * power[0].max(1.0)) {
        return Err(NoiseError::ZeroImage);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (2..n / 2)
        .filter(|&r| power[r] > 0.0)
        .map(|r| ((r as f64).ln(), power[r].ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(NoiseError::ZeroImage);
    }
    Ok(ols_slope(&xs, &ys))
}
