//! The image record exchanged by every subsystem, and its on-disk forms.
//!
//! Pseudo-image files ("tensor files") are a single UTF-8 JSON header line
//! followed by the pixels as little-endian `f32` in HWC order:
//!
//! ```text
//! {"dims":[H,W,C],"label":3,"provenance":"mixup"}\n
//! <H*W*C little-endian f32>
//! ```

use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const MNIST: Dims = Dims::new(28, 28, 1);
    pub const CIFAR10: Dims = Dims::new(32, 32, 3);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Mixup,
    NaturalNoise,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Mixup => "mixup",
            Provenance::NaturalNoise => "natural_noise",
        }
    }

    pub fn is_pseudo(self) -> bool {
        self != Provenance::Real
    }
}

/// Pixels are stored HWC, nominal range [0, 255].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub dims: Dims,
    pub pixels: Vec<f32>,
    pub label: usize,
    pub provenance: Provenance,
}

impl LabeledImage {
    pub fn new(dims: Dims, pixels: Vec<f32>, label: usize, provenance: Provenance) -> Self {
        assert_eq!(dims.len(), pixels.len(), "pixel buffer does not match dims");
        Self {
            dims,
            pixels,
            label,
            provenance,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.pixels[(row * self.dims.width + col) * self.dims.channels + ch]
    }
}

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed tensor header: {0}")]
    Header(String),
    #[error("tensor payload holds {got} bytes, header implies {expected}")]
    Payload { expected: usize, got: usize },
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dims: [usize; 3],
    label: usize,
    provenance: Provenance,
}

pub fn write_tensor<W: Write>(mut w: W, img: &LabeledImage) -> io::Result<()> {
    let header = TensorHeader {
        dims: [img.dims.height, img.dims.width, img.dims.channels],
        label: img.label,
        provenance: img.provenance,
    };
    let line = serde_json::to_string(&header).map_err(io::Error::other)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(img.pixels.len() * 4);
    for p in &img.pixels {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_tensor<R: BufRead>(mut r: R) -> Result<LabeledImage, TensorFileError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: TensorHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| TensorFileError::Header(e.to_string()))?;
    let dims = Dims::new(header.dims[0], header.dims[1], header.dims[2]);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != dims.len() * 4 {
        return Err(TensorFileError::Payload {
            expected: dims.len() * 4,
            got: payload.len(),
        });
    }
    let pixels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(LabeledImage {
        dims,
        pixels,
        label: header.label,
        provenance: header.provenance,
    })
}

/// Binary PPM (P6) for inspection. Values are clamped to [0,255] here and
/// nowhere else; grayscale images are replicated to three channels.
pub fn write_ppm<W: Write>(mut w: W, img: &LabeledImage) -> io::Result<()> {
    let Dims {
        height,
        width,
        channels,
    } = img.dims;
    write!(w, "P6\n{width} {height}\n255\n")?;
    let mut buf = Vec::with_capacity(height * width * 3);
    for px in img.pixels.chunks_exact(channels) {
        for c in 0..3 {
            let v = px[if channels >= 3 { c } else { 0 }];
            buf.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&buf)
}
