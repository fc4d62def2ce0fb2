//! Label balancing: bounty requests for mixups, peer service, trimming, and
//! natural-noise backfill.

mod network;
mod protocol;

pub use network::{
    route, write_trace, Delivery, Destination, Message, NodeId, Outgoing, Topology, TraceRow,
};
pub use protocol::{
    balance_all, run_balance, BalanceConfig, BalanceError, BalanceOutcome, LabelFill,
};

use crate::dataset_io::ClientDataset;
use crate::image::LabeledImage;
use crate::mixup_dp::{generate_mixups, DpMixConfig};
use crate::par::Parallelism;
use serde::{Deserialize, Serialize};

/// Public request for `quantity` label-`label` mixups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BountyRequest {
    pub requester: usize,
    pub label: usize,
    pub quantity: usize,
    /// Rounds the requester waits for responses.
    pub deadline: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BountyResponse {
    pub supplier: usize,
    pub requester: usize,
    pub label: usize,
    pub samples: Vec<LabeledImage>,
}

/// A responder's willingness to serve mixups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyPolicy {
    /// Serve at most `floor(capacity_fraction * count(label))` mixups.
    pub capacity_fraction: f64,
}

impl Default for SupplyPolicy {
    fn default() -> Self {
        Self {
            capacity_fraction: 1.0,
        }
    }
}

impl SupplyPolicy {
    /// Needs at least one example of `label` and at least `k` examples overall.
    pub fn willing(&self, histogram: &[usize], label: usize, k: usize) -> bool {
        let total: usize = histogram.iter().sum();
        histogram.get(label).copied().unwrap_or(0) >= 1
            && total >= k
            && self.capacity_fraction > 0.0
    }

    pub fn capacity(&self, histogram: &[usize], label: usize) -> usize {
        let count = histogram.get(label).copied().unwrap_or(0);
        (self.capacity_fraction.clamp(0.0, 1.0) * count as f64 + 1e-9).floor() as usize
    }
}

/// A label the client is short of and by how much.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deficit {
    pub label: usize,
    pub amount: usize,
}

/// Every label whose local count is below its target, ordered by ascending
/// local count then label.
pub fn plan_deficits(client: &ClientDataset, targets: &[usize]) -> Vec<Deficit> {
    let mut out: Vec<(usize, Deficit)> = targets
        .iter()
        .enumerate()
        .filter_map(|(label, &p)| {
            let have = client.count(label);
            (have < p).then(|| {
                (
                    have,
                    Deficit {
                        label,
                        amount: p - have,
                    },
                )
            })
        })
        .collect();
    out.sort_by_key(|(have, d)| (*have, d.label));
    out.into_iter().map(|(_, d)| d).collect()
}

/// `ceil(fraction * amount)` without float noise pushing exact products up.
pub fn mix_quota(fraction: f64, amount: usize) -> usize {
    let x = fraction.clamp(0.0, 1.0) * amount as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(amount)
}

/// Responder side: mixups of `req.label` drawn from `responder`'s data.
/// Unwilling responders answer with an empty sample set.
pub fn serve_bounty(
    responder: &ClientDataset,
    req: &BountyRequest,
    policy: &SupplyPolicy,
    cfg: &DpMixConfig,
    seed: u64,
    mode: Parallelism,
) -> BountyResponse {
    let empty = || BountyResponse {
        supplier: responder.client_id,
        requester: req.requester,
        label: req.label,
        samples: Vec::new(),
    };
    if !policy.willing(responder.histogram(), req.label, cfg.k) {
        return empty();
    }
    let n = req
        .quantity
        .min(policy.capacity(responder.histogram(), req.label));
    match generate_mixups(responder, req.label, cfg, n, seed, mode) {
        Ok(samples) => BountyResponse { samples, ..empty() },
        Err(_) => empty(),
    }
}
