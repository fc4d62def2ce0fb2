//! Central finite-difference check of [`backward_with`] in `f64`.

use super::model::{backward_with, cross_entropy, forward_with, Batch, Cache, Layer, Schema};
use crate::rng::SimRng;
use rand::seq::SliceRandom;

/// Result for one parameterized layer type (all layers of that type pooled).
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`. Coordinates whose
/// `±h` perturbation changes any ReLU sign or max-pool winner sit on a kink
/// where the loss is not differentiable; they are skipped and replaced by
/// the next random coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub kind: &'static str,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

/// ReLU signs and max-pool winners for every example.
fn activation_pattern(schema: &Schema, cache: &Cache<f64>) -> Vec<u8> {
    let shapes = schema.shapes().expect("validated schema");
    let mut bits = Vec::new();
    for acts in &cache.acts {
        for (li, layer) in schema.layers.iter().enumerate() {
            let x = &acts[li];
            match layer {
                Layer::Relu => bits.extend(x.iter().map(|&v| u8::from(v > 0.0))),
                Layer::MaxPool2 => {
                    let s = shapes[li];
                    for c in 0..s.channels {
                        for r in 0..s.height / 2 {
                            for col in 0..s.width / 2 {
                                let idx = |dr: usize, dc: usize| {
                                    (c * s.height + 2 * r + dr) * s.width + 2 * col + dc
                                };
                                let mut best = 0u8;
                                for (k, (dr, dc)) in
                                    [(0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                                {
                                    let (br, bc) = [(0, 0), (0, 1), (1, 0), (1, 1)][best as usize];
                                    if x[idx(dr, dc)] > x[idx(br, bc)] {
                                        best = k as u8 + 1;
                                    }
                                }
                                bits.push(best);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }
    bits
}

pub fn gradient_check(
    schema: &Schema,
    params: &[f64],
    batch: &Batch<f64>,
    per_type: usize,
    h: f64,
    floor: f64,
    rng: &mut SimRng,
) -> Vec<GradCheck> {
    let (_, cache) = forward_with(schema, params, batch).expect("valid batch");
    let base = activation_pattern(schema, &cache);
    let analytic = backward_with(schema, params, batch, &cache);
    let eval = |p: &[f64]| {
        let (logits, cache) = forward_with(schema, p, batch).expect("valid batch");
        (
            cross_entropy(&logits, &batch.labels),
            activation_pattern(schema, &cache),
        )
    };
    let mut by_kind: Vec<(&'static str, Vec<usize>)> = Vec::new();
    let mut offset = 0;
    for layer in &schema.layers {
        let n = layer.param_count();
        let kind = match layer {
            Layer::Dense { .. } => "dense",
            Layer::Conv3x3 { .. } => "conv3x3",
            _ => continue,
        };
        match by_kind.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, v)) => v.extend(offset..offset + n),
            None => by_kind.push((kind, (offset..offset + n).collect())),
        }
        offset += n;
    }
    let mut shadow = params.to_vec();
    by_kind
        .into_iter()
        .map(|(kind, mut coords)| {
            coords.shuffle(rng);
            let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
            for i in coords {
                if checked == per_type {
                    break;
                }
                let orig = shadow[i];
                shadow[i] = orig + h;
                let (up, pat_up) = eval(&shadow);
                shadow[i] = orig - h;
                let (down, pat_down) = eval(&shadow);
                shadow[i] = orig;
                if pat_up != base || pat_down != base {
                    skipped += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[i];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
                checked += 1;
            }
            GradCheck {
                kind,
                checked,
                skipped_kinks: skipped,
                max_rel_error: worst,
            }
        })
        .collect()
}
