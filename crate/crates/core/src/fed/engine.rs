//! FedAvg rounds: broadcast, local Adam epochs, size-weighted averaging,
//! global evaluation.

use super::adam::{adam_step, AdamConfig, OptState};
use super::fedavg::fedavg_aggregate;
use super::model::{
    backward_with, cross_entropy, forward_with, image_to_input, Batch, ModelParams, Schema,
};
use super::FedError;
use crate::image::LabeledImage;
use crate::par::{self, Parallelism};
use crate::rng::{stream, tag, SimRng};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fraction of clients sampled each round.
    pub participation_fraction: f64,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            batch_size: 128,
            adam: AdamConfig::default(),
            participation_fraction: 1.0,
            seed: 0,
            parallelism: Parallelism::Rayon,
        }
    }
}

/// Model-ready inputs (CHW, scaled by 1/255) and labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSet {
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

impl TrainSet {
    pub fn from_images(images: &[LabeledImage]) -> Self {
        Self {
            inputs: images.iter().map(image_to_input).collect(),
            labels: images.iter().map(|i| i.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Batch<f32> {
        Batch {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A participant: its own data and its own optimizer state, nothing else.
#[derive(Debug, Clone)]
pub struct FedClient {
    pub id: usize,
    pub data: TrainSet,
    pub opt: OptState,
}

impl FedClient {
    pub fn new(id: usize, images: &[LabeledImage], schema: &Schema, adam: AdamConfig) -> Self {
        Self {
            id,
            data: TrainSet::from_images(images),
            opt: OptState::new(adam, schema.param_count()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub test_accuracy: f64,
    /// `(client_id, mean local loss)` for the clients that trained.
    pub client_losses: Vec<(usize, f64)>,
    pub mean_train_loss: f64,
    pub seconds: f64,
}

/// `epochs` shuffled passes of mini-batch Adam. Returns the example-weighted
/// mean loss.
pub fn train_local(
    model: &mut ModelParams,
    opt: &mut OptState,
    data: &TrainSet,
    epochs: usize,
    batch_size: usize,
    rng: &mut SimRng,
) -> Result<f64, FedError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut seen) = (0.0f64, 0usize);
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let batch = data.batch(chunk);
            let (logits, cache) = forward_with(&model.schema, &model.params, &batch)?;
            loss_sum += f64::from(cross_entropy(&logits, &batch.labels)) * chunk.len() as f64;
            seen += chunk.len();
            let grad = backward_with(&model.schema, &model.params, &batch, &cache);
            adam_step(&mut model.params, &grad, opt)?;
        }
    }
    Ok(if seen == 0 {
        0.0
    } else {
        loss_sum / seen as f64
    })
}

/// Fraction of `test` classified correctly.
pub fn evaluate(model: &ModelParams, test: &TrainSet, mode: Parallelism) -> Result<f64, FedError> {
    if test.is_empty() {
        return Ok(0.0);
    }
    const CHUNK: usize = 256;
    let chunks = test.len().div_ceil(CHUNK);
    let correct = par::map_range(mode, chunks, |c| -> Result<usize, FedError> {
        let idx: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(test.len())).collect();
        let batch = test.batch(&idx);
        let (logits, _) = forward_with(&model.schema, &model.params, &batch)?;
        Ok(logits
            .iter()
            .zip(&batch.labels)
            .filter(|(z, &y)| {
                let best = z
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i);
                best == Some(y)
            })
            .count())
    })
    .into_iter()
    .sum::<Result<usize, _>>()?;
    Ok(correct as f64 / test.len() as f64)
}

/// Indices of the clients taking part in `round`.
pub fn participants(num_clients: usize, round: usize, cfg: &FedConfig) -> Vec<usize> {
    if cfg.participation_fraction >= 1.0 {
        return (0..num_clients).collect();
    }
    let m =
        ((cfg.participation_fraction * num_clients as f64).round() as usize).clamp(1, num_clients);
    let mut rng = stream(cfg.seed, &[tag::PARTICIPATION, round as u64]);
    let mut picked = index::sample(&mut rng, num_clients, m).into_vec();
    picked.sort_unstable();
    picked
}

pub fn run_round(
    global: &ModelParams,
    clients: &mut [FedClient],
    cfg: &FedConfig,
    round: usize,
    test: &TrainSet,
) -> Result<(ModelParams, RoundReport), FedError> {
    let started = Instant::now();
    let chosen = participants(clients.len(), round, cfg);
    let mut selected: Vec<&mut FedClient> = Vec::with_capacity(chosen.len());
    {
        let mut want = chosen.iter().peekable();
        for (i, c) in clients.iter_mut().enumerate() {
            if want.peek() == Some(&&i) {
                want.next();
                if !c.data.is_empty() {
                    selected.push(c);
                }
            }
        }
    }
    if selected.is_empty() {
        return Err(FedError::NoClients);
    }
    let results = par::map_slice_mut(cfg.parallelism, &mut selected, |_, client| {
        let mut local = global.clone();
        let mut rng = stream(
            cfg.seed,
            &[tag::LOCAL_TRAIN, round as u64, client.id as u64],
        );
        let loss = train_local(
            &mut local,
            &mut client.opt,
            &client.data,
            cfg.local_epochs,
            cfg.batch_size,
            &mut rng,
        )?;
        Ok::<_, FedError>((client.id, client.data.len(), local, loss))
    });
    let results: Vec<_> = results.into_iter().collect::<Result<_, _>>()?;
    let total: usize = results.iter().map(|r| r.1).sum();
    let mut weights: Vec<f64> = results.iter().map(|r| r.1 as f64 / total as f64).collect();
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    let models: Vec<&ModelParams> = results.iter().map(|r| &r.2).collect();
    let next = fedavg_aggregate(&models, &weights)?;
    let test_accuracy = evaluate(&next, test, cfg.parallelism)?;
    let client_losses: Vec<(usize, f64)> = results.iter().map(|r| (r.0, r.3)).collect();
    let mean_train_loss = results.iter().map(|r| r.3 * r.1 as f64).sum::<f64>() / total as f64;
    let report = RoundReport {
        round,
        test_accuracy,
        client_losses,
        mean_train_loss,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((next, report))
}

/// Writes `round,global_test_acc,mean_train_loss,seconds`. With
/// `wallclock = false` the seconds column is written as 0 so that files
/// are byte-reproducible.
pub fn write_metrics<W: Write>(
    mut w: W,
    reports: &[RoundReport],
    wallclock: bool,
) -> io::Result<()> {
    writeln!(w, "round,global_test_acc,mean_train_loss,seconds")?;
    for r in reports {
        let secs = if wallclock { r.seconds } else { 0.0 };
        writeln!(
            w,
            "{},{:.6},{:.6},{:.3}",
            r.round, r.test_accuracy, r.mean_train_loss, secs
        )?;
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "skewmix-model-v1";

/// `skewmix-model-v1 <schema json>\n` then little-endian `f32` parameters.
pub fn write_checkpoint<W: Write>(mut w: W, model: &ModelParams) -> io::Result<()> {
    let schema = serde_json::to_string(&model.schema).map_err(io::Error::other)?;
    writeln!(w, "{CHECKPOINT_MAGIC} {schema}")?;
    let mut buf = Vec::with_capacity(model.params.len() * 4);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> io::Result<ModelParams> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let rest = line
        .trim_end()
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "not a model checkpoint"))?;
    let schema: Schema = serde_json::from_str(rest.trim())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let params: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if payload.len() % 4 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "trailing bytes in checkpoint",
        ));
    }
    ModelParams::new(schema, params)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}
