//! Small hand-differentiated classifiers over a flat parameter vector.
//!
//! Activations are channel-major (CHW). Parameters are laid out layer by
//! layer; a dense layer stores `[out][in]` weights then `out` biases, a 3x3
//! convolution stores `[out][in][3][3]` weights then `out` biases.

use crate::image::{Dims, LabeledImage};
use crate::rng::SimRng;
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::iter::Sum;
use thiserror::Error;

pub trait Real: Float + Sum + Send + Sync + std::fmt::Debug + 'static {}
impl<T: Float + Sum + Send + Sync + std::fmt::Debug + 'static> Real for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool2,
    Relu,
    /// Terminal layer, fused with the cross-entropy loss.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => inputs * outputs + outputs,
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => in_channels * out_channels * 9 + out_channels,
            _ => 0,
        }
    }

    fn output_shape(&self, s: Shape) -> Result<Shape, ModelError> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                if s.len() != inputs {
                    return Err(ModelError::ShapeMismatch(format!(
                        "dense expects {inputs} inputs, got {}",
                        s.len()
                    )));
                }
                Ok(Shape {
                    channels: outputs,
                    height: 1,
                    width: 1,
                })
            }
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                if s.channels != in_channels {
                    return Err(ModelError::ShapeMismatch(format!(
                        "conv expects {in_channels} channels, got {}",
                        s.channels
                    )));
                }
                Ok(Shape {
                    channels: out_channels,
                    ..s
                })
            }
            Layer::MaxPool2 => {
                if s.height < 2 || s.width < 2 {
                    return Err(ModelError::ShapeMismatch(
                        "max-pool input smaller than 2x2".into(),
                    ));
                }
                Ok(Shape {
                    channels: s.channels,
                    height: s.height / 2,
                    width: s.width / 2,
                })
            }
            Layer::Relu | Layer::Softmax => Ok(s),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("schema must end with a single Softmax layer")]
    MissingSoftmax,
    #[error("parameter vector has {got} entries, schema needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Logistic,
    Mlp,
    Cnn,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(format!("unknown model '{other}' (logistic|mlp|cnn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl Schema {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self, ModelError> {
        let schema = Self { input, layers };
        schema.shapes()?;
        if schema.layers.last() != Some(&Layer::Softmax)
            || schema
                .layers
                .iter()
                .filter(|l| **l == Layer::Softmax)
                .count()
                != 1
        {
            return Err(ModelError::MissingSoftmax);
        }
        Ok(schema)
    }

    pub fn for_kind(kind: ModelKind, dims: Dims, num_classes: usize) -> Result<Self, ModelError> {
        let input = Shape {
            channels: dims.channels,
            height: dims.height,
            width: dims.width,
        };
        let d = input.len();
        let layers = match kind {
            ModelKind::Logistic => vec![
                Layer::Dense {
                    inputs: d,
                    outputs: num_classes,
                },
                Layer::Softmax,
            ],
            ModelKind::Mlp => vec![
                Layer::Dense {
                    inputs: d,
                    outputs: 256,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 256,
                    outputs: num_classes,
                },
                Layer::Softmax,
            ],
            ModelKind::Cnn => {
                let flat = 16 * (dims.height / 4) * (dims.width / 4);
                vec![
                    Layer::Conv3x3 {
                        in_channels: dims.channels,
                        out_channels: 8,
                    },
                    Layer::Relu,
                    Layer::MaxPool2,
                    Layer::Conv3x3 {
                        in_channels: 8,
                        out_channels: 16,
                    },
                    Layer::Relu,
                    Layer::MaxPool2,
                    Layer::Dense {
                        inputs: flat,
                        outputs: num_classes,
                    },
                    Layer::Softmax,
                ]
            }
        };
        Self::new(input, layers)
    }

    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut out = vec![self.input];
        for l in &self.layers {
            let next = l.output_shape(*out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.shapes()
            .expect("validated schema")
            .last()
            .unwrap()
            .len()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.param_count();
                o
            })
            .collect()
    }
}

/// Schema plus flat `f32` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub schema: Schema,
    pub params: Vec<f32>,
}

impl ModelParams {
    pub fn new(schema: Schema, params: Vec<f32>) -> Result<Self, ModelError> {
        if params.len() != schema.param_count() {
            return Err(ModelError::ParamCount {
                expected: schema.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { schema, params })
    }

    pub fn zeros(schema: Schema) -> Self {
        let n = schema.param_count();
        Self {
            schema,
            params: vec![0.0; n],
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init(schema: Schema, rng: &mut SimRng) -> Self {
        let mut params = Vec::with_capacity(schema.param_count());
        for l in &schema.layers {
            let (fan_in, weights, biases) = match *l {
                Layer::Dense { inputs, outputs } => (inputs, inputs * outputs, outputs),
                Layer::Conv3x3 {
                    in_channels,
                    out_channels,
                } => (
                    in_channels * 9,
                    in_channels * out_channels * 9,
                    out_channels,
                ),
                _ => continue,
            };
            let bound = (6.0 / fan_in as f32).sqrt();
            params.extend((0..weights).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, biases));
        }
        Self { schema, params }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// A batch of CHW inputs already scaled to the model's range.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// HWC pixels in [0, 255] to CHW model input scaled by 1/255.
pub fn image_to_input<T: Real>(img: &LabeledImage) -> Vec<T> {
    let Dims {
        height,
        width,
        channels,
    } = img.dims;
    let scale = T::from(1.0 / 255.0).unwrap();
    let mut out = vec![T::zero(); img.pixels.len()];
    for r in 0..height {
        for c in 0..width {
            for ch in 0..channels {
                out[(ch * height + r) * width + c] =
                    T::from(img.pixels[(r * width + c) * channels + ch]).unwrap() * scale;
            }
        }
    }
    out
}

pub fn batch_from_images<'a, T: Real, I: IntoIterator<Item = &'a LabeledImage>>(
    images: I,
) -> Batch<T> {
    let (inputs, labels) = images
        .into_iter()
        .map(|img| (image_to_input(img), img.label))
        .unzip();
    Batch { inputs, labels }
}

/// Per-example layer inputs recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    /// `acts[e][l]` is the input to layer `l` for example `e`; the last
    /// entry is the logits.
    pub acts: Vec<Vec<Vec<T>>>,
}

fn cast_params<T: Real>(p: &[f32]) -> Vec<T> {
    p.iter().map(|&v| T::from(v).unwrap()).collect()
}

fn dense_fwd<T: Real>(w: &[T], x: &[T], inputs: usize, outputs: usize) -> Vec<T> {
    let (weights, bias) = w.split_at(inputs * outputs);
    (0..outputs)
        .map(|o| {
            let row = &weights[o * inputs..(o + 1) * inputs];
            row.iter().zip(x).fold(bias[o], |acc, (&a, &b)| acc + a * b)
        })
        .collect()
}

fn conv_fwd<T: Real>(w: &[T], x: &[T], s: Shape, out_ch: usize) -> Vec<T> {
    let (h, wd) = (s.height, s.width);
    let plane = h * wd;
    let (weights, bias) = w.split_at(s.channels * out_ch * 9);
    let mut out = vec![T::zero(); out_ch * plane];
    for o in 0..out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..s.channels {
            let src = &x[i * plane..(i + 1) * plane];
            for kr in 0..3 {
                for kc in 0..3 {
                    let k = weights[((o * s.channels + i) * 3 + kr) * 3 + kc];
                    let r0 = 1usize.saturating_sub(kr);
                    let r1 = (h + 1 - kr).min(h);
                    let c0 = 1usize.saturating_sub(kc);
                    let c1 = (wd + 1 - kc).min(wd);
                    for r in r0..r1 {
                        let sr = r + kr - 1;
                        let drow = &mut dst[r * wd + c0..r * wd + c1];
                        let srow = &src[sr * wd + c0 + kc - 1..sr * wd + c1 + kc - 1];
                        for (d, &v) in drow.iter_mut().zip(srow) {
                            *d = *d + k * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn pool_fwd<T: Real>(x: &[T], s: Shape) -> Vec<T> {
    let (oh, ow) = (s.height / 2, s.width / 2);
    let mut out = Vec::with_capacity(s.channels * oh * ow);
    for c in 0..s.channels {
        for r in 0..oh {
            for col in 0..ow {
                let at =
                    |dr: usize, dc: usize| x[(c * s.height + 2 * r + dr) * s.width + 2 * col + dc];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

/// Logits for every example, plus the activations needed by [`backward`].
pub fn forward<T: Real>(
    model: &ModelParams,
    batch: &Batch<T>,
) -> Result<(Vec<Vec<T>>, Cache<T>), ModelError> {
    let params: Vec<T> = cast_params(&model.params);
    forward_with(&model.schema, &params, batch)
}

pub fn forward_with<T: Real>(
    schema: &Schema,
    params: &[T],
    batch: &Batch<T>,
) -> Result<(Vec<Vec<T>>, Cache<T>), ModelError> {
    if params.len() != schema.param_count() {
        return Err(ModelError::ParamCount {
            expected: schema.param_count(),
            got: params.len(),
        });
    }
    let shapes = schema.shapes()?;
    let offsets = schema.offsets();
    let mut acts = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    for x in &batch.inputs {
        if x.len() != schema.input.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} values, schema expects {}",
                x.len(),
                schema.input.len()
            )));
        }
        let mut per_layer = Vec::with_capacity(schema.layers.len() + 1);
        let mut cur = x.clone();
        for (li, layer) in schema.layers.iter().enumerate() {
            let w = &params[offsets[li]..offsets[li] + layer.param_count()];
            let next = match *layer {
                Layer::Dense { inputs, outputs } => dense_fwd(w, &cur, inputs, outputs),
                Layer::Conv3x3 { out_channels, .. } => conv_fwd(w, &cur, shapes[li], out_channels),
                Layer::MaxPool2 => pool_fwd(&cur, shapes[li]),
                Layer::Relu => cur.iter().map(|&v| v.max(T::zero())).collect(),
                Layer::Softmax => cur.clone(),
            };
            per_layer.push(std::mem::replace(&mut cur, next));
        }
        logits.push(cur.clone());
        per_layer.push(cur);
        acts.push(per_layer);
    }
    Ok((logits, Cache { acts }))
}

pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of logits against labels.
pub fn cross_entropy<T: Real>(logits: &[Vec<T>], labels: &[usize]) -> T {
    let n = T::from(labels.len()).unwrap();
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            lse - z[y]
        })
        .sum::<T>()
        / n
}

/// Gradient of the mean cross-entropy with respect to the flat parameters.
pub fn backward<T: Real>(model: &ModelParams, batch: &Batch<T>, cache: &Cache<T>) -> Vec<T> {
    let params: Vec<T> = cast_params(&model.params);
    backward_with(&model.schema, &params, batch, cache)
}

pub fn backward_with<T: Real>(
    schema: &Schema,
    params: &[T],
    batch: &Batch<T>,
    cache: &Cache<T>,
) -> Vec<T> {
    let shapes = schema.shapes().expect("validated schema");
    let offsets = schema.offsets();
    let mut grad = vec![T::zero(); params.len()];
    let inv_n = T::one() / T::from(batch.len()).unwrap();
    for (acts, &label) in cache.acts.iter().zip(&batch.labels) {
        let logits = acts.last().unwrap();
        let mut delta = softmax(logits);
        delta[label] = delta[label] - T::one();
        delta.iter_mut().for_each(|d| *d = *d * inv_n);
        for li in (0..schema.layers.len()).rev() {
            let input = &acts[li];
            let s = shapes[li];
            let off = offsets[li];
            delta = match schema.layers[li] {
                Layer::Softmax => delta,
                Layer::Relu => delta
                    .iter()
                    .zip(input)
                    .map(|(&d, &x)| if x > T::zero() { d } else { T::zero() })
                    .collect(),
                Layer::Dense { inputs, outputs } => {
                    let w = &params[off..off + inputs * outputs];
                    let g = &mut grad[off..off + inputs * outputs + outputs];
                    let mut dx = vec![T::zero(); inputs];
                    for o in 0..outputs {
                        let d = delta[o];
                        if d == T::zero() {
                            continue;
                        }
                        let row = &w[o * inputs..(o + 1) * inputs];
                        let grow = &mut g[o * inputs..(o + 1) * inputs];
                        for ((gw, dxi), (&wi, &xi)) in grow
                            .iter_mut()
                            .zip(dx.iter_mut())
                            .zip(row.iter().zip(input))
                        {
                            *gw = *gw + d * xi;
                            *dxi = *dxi + d * wi;
                        }
                        g[inputs * outputs + o] = g[inputs * outputs + o] + d;
                    }
                    dx
                }
                Layer::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    let (h, wd) = (s.height, s.width);
                    let plane = h * wd;
                    let nw = in_channels * out_channels * 9;
                    let w = &params[off..off + nw];
                    let g = &mut grad[off..off + nw + out_channels];
                    let mut dx = vec![T::zero(); in_channels * plane];
                    for o in 0..out_channels {
                        let dout = &delta[o * plane..(o + 1) * plane];
                        g[nw + o] = g[nw + o] + dout.iter().copied().sum::<T>();
                        for i in 0..in_channels {
                            let src = &input[i * plane..(i + 1) * plane];
                            let dsrc = &mut dx[i * plane..(i + 1) * plane];
                            for kr in 0..3 {
                                for kc in 0..3 {
                                    let widx = ((o * in_channels + i) * 3 + kr) * 3 + kc;
                                    let k = w[widx];
                                    let mut acc = T::zero();
                                    let r0 = 1usize.saturating_sub(kr);
                                    let r1 = (h + 1 - kr).min(h);
                                    let c0 = 1usize.saturating_sub(kc);
                                    let c1 = (wd + 1 - kc).min(wd);
                                    for r in r0..r1 {
                                        let sr = r + kr - 1;
                                        for c in c0..c1 {
                                            let sc = c + kc - 1;
                                            let d = dout[r * wd + c];
                                            acc = acc + d * src[sr * wd + sc];
                                            dsrc[sr * wd + sc] = dsrc[sr * wd + sc] + d * k;
                                        }
                                    }
                                    g[widx] = g[widx] + acc;
                                }
                            }
                        }
                    }
                    dx
                }
                Layer::MaxPool2 => {
                    let (oh, ow) = (s.height / 2, s.width / 2);
                    let mut dx = vec![T::zero(); s.len()];
                    for c in 0..s.channels {
                        for r in 0..oh {
                            for col in 0..ow {
                                let mut best = (0, 0);
                                let idx = |dr: usize, dc: usize| {
                                    (c * s.height + 2 * r + dr) * s.width + 2 * col + dc
                                };
                                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                                    if input[idx(dr, dc)] > input[idx(best.0, best.1)] {
                                        best = (dr, dc);
                                    }
                                }
                                dx[idx(best.0, best.1)] = delta[(c * oh + r) * ow + col];
                            }
                        }
                    }
                    dx
                }
            };
        }
    }
    grad
}
