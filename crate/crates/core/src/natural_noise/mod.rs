//! Training-free "natural noise" images and a spectral diagnostic.

mod generator;
mod spectrum;
mod wavelet;

pub use generator::{
    conv_layer, generate, generate_batch, init_generator, synthesize, ConvInit, FeatureMap,
    GeneratorConfig, GeneratorState, NoiseError, ScaleLayer, UnlabeledImage,
};
pub use spectrum::{fft2, grayscale, power_spectrum_slope, radial_power, slope_of_gray};
pub use wavelet::{sample_wavelet, Wavelet, WaveletBank, GABOR_WAVELENGTHS};
