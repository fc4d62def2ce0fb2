//! Client partitioning under C-class label skew or Dirichlet label skew.

use super::{ClientDataset, DatasetError};
use crate::image::LabeledImage;
use crate::rng::{stream, tag, SimRng};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    /// Every client holds exactly this many distinct labels.
    ClassSkew(usize),
    /// Per-label client proportions drawn from a symmetric Dirichlet with
    /// this concentration.
    Dirichlet(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    pub seed: u64,
}

/// Sizes of `parts` near-equal shares of `n` (earlier parts get the +1).
pub fn split_counts(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .collect()
}

/// Labels held by each client: round-robin over a shuffled label list.
pub fn class_skew_assignment(
    num_classes: usize,
    num_clients: usize,
    per_client: usize,
    rng: &mut SimRng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.shuffle(rng);
    (0..num_clients)
        .map(|i| {
            (0..per_client)
                .map(|t| order[(i * per_client + t) % num_classes])
                .collect()
        })
        .collect()
}

/// One row per label: that label's share for each client.
pub fn dirichlet_proportions(
    num_classes: usize,
    num_clients: usize,
    concentration: f64,
    rng: &mut SimRng,
) -> Vec<Vec<f64>> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration must be positive");
    (0..num_classes)
        .map(|_| {
            let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                draws.iter().map(|d| d / total).collect()
            } else {
                // every draw underflowed; the mass goes to the first client
                let mut v = vec![0.0; num_clients];
                v[0] = 1.0;
                v
            }
        })
        .collect()
}

fn proportional_counts(n: usize, shares: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shares.len());
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (i, s) in shares.iter().enumerate() {
        cum += s;
        let edge = if i + 1 == shares.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).min(n)
        };
        let edge = edge.max(prev);
        out.push(edge - prev);
        prev = edge;
    }
    out
}

fn validate(
    spec: &PartitionSpec,
    num_classes: usize,
    global: &[usize],
) -> Result<(), DatasetError> {
    if spec.num_clients == 0 {
        return Err(DatasetError::InfeasibleSpec(
            "need at least one client".into(),
        ));
    }
    match spec.scheme {
        PartitionScheme::ClassSkew(c) => {
            if c == 0 || c > num_classes {
                return Err(DatasetError::InfeasibleSpec(format!(
                    "C={c} outside 1..={num_classes}"
                )));
            }
            if spec.num_clients * c < num_classes {
                return Err(DatasetError::InfeasibleSpec(format!(
                    "{} clients x {c} labels cannot cover {num_classes} labels",
                    spec.num_clients
                )));
            }
            let _ = global;
        }
        PartitionScheme::Dirichlet(a) => {
            if !(a > 0.0 && a.is_finite()) {
                return Err(DatasetError::InfeasibleSpec(format!(
                    "Dirichlet concentration {a} must be > 0"
                )));
            }
        }
    }
    Ok(())
}

/// Splits `dataset` across clients. The union of all client datasets is
/// exactly the input; the result depends only on the inputs and the seed.
pub fn partition(
    dataset: &[LabeledImage],
    num_classes: usize,
    spec: &PartitionSpec,
) -> Result<Vec<ClientDataset>, DatasetError> {
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, img) in dataset.iter().enumerate() {
        if img.label >= num_classes {
            return Err(DatasetError::LabelOutOfRange {
                index: i,
                label: img.label,
                num_classes,
            });
        }
        by_label[img.label].push(i);
    }
    let global: Vec<usize> = by_label.iter().map(Vec::len).collect();
    validate(spec, num_classes, &global)?;
    let mut rng = stream(spec.seed, &[tag::PARTITION]);

    // owner[label] = list of (client, count) in client order
    let owners: Vec<Vec<(usize, usize)>> = match spec.scheme {
        PartitionScheme::ClassSkew(c) => {
            let assignment = class_skew_assignment(num_classes, spec.num_clients, c, &mut rng);
            let mut holders: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
            for (client, labels) in assignment.iter().enumerate() {
                for &l in labels {
                    holders[l].push(client);
                }
            }
            holders
                .iter()
                .enumerate()
                .map(|(label, hs)| {
                    if global[label] < hs.len() {
                        return Err(DatasetError::InfeasibleSpec(format!(
                            "label {label} has {} examples for {} holders",
                            global[label],
                            hs.len()
                        )));
                    }
                    Ok(hs
                        .iter()
                        .copied()
                        .zip(split_counts(global[label], hs.len()))
                        .collect())
                })
                .collect::<Result<_, _>>()?
        }
        PartitionScheme::Dirichlet(a) => {
            let props = dirichlet_proportions(num_classes, spec.num_clients, a, &mut rng);
            props
                .iter()
                .zip(&global)
                .map(|(p, &n)| proportional_counts(n, p).into_iter().enumerate().collect())
                .collect()
        }
    };

    let mut clients: Vec<ClientDataset> = (0..spec.num_clients)
        .map(|id| ClientDataset::new(id, num_classes))
        .collect();
    for (label, idx) in by_label.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let mut start = 0;
        for &(client, count) in &owners[label] {
            clients[client].extend(
                idx[start..start + count]
                    .iter()
                    .map(|&i| dataset[i].clone()),
            );
            start += count;
        }
        debug_assert_eq!(start, idx.len());
    }
    Ok(clients)
}

/// CSV rows `client_id,label,count` for every non-empty (client, label).
pub fn write_manifest<W: Write>(mut w: W, clients: &[ClientDataset]) -> io::Result<()> {
    writeln!(w, "client_id,label,count")?;
    for c in clients {
        for (label, &count) in c.histogram().iter().enumerate() {
            if count > 0 {
                writeln!(w, "{},{},{}", c.client_id, label, count)?;
            }
        }
    }
    Ok(())
}
