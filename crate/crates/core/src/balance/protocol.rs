//! The requester's side of label balancing, simulated round by round.
//!
//! For each deficit `(j, P)` in plan order the requester broadcasts a bounty
//! for `ceil(mix_fraction * P)` mixups, every reachable peer answers from its
//! own real data, and responses that arrive within the deadline are pooled.
//! An oversupply is trimmed uniformly at random; whatever the mixups do not
//! cover is filled with natural-noise images labeled `j`. Existing local
//! examples are never removed.

use super::network::{route, Delivery, Destination, Message, Outgoing, Topology, TraceRow};
use super::{mix_quota, serve_bounty, BountyRequest, Deficit, SupplyPolicy};
use crate::dataset_io::ClientDataset;
use crate::image::LabeledImage;
use crate::mixup_dp::DpMixConfig;
use crate::natural_noise::{generate_batch, GeneratorState, NoiseError};
use crate::par::{self, Parallelism};
use crate::rng::{derive_seed, stream, tag};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Share of each deficit requested as mixups (the rest is natural noise).
    pub mix_fraction: f64,
    /// Rounds to wait for responses after issuing a request.
    pub deadline: u64,
    pub mix: DpMixConfig,
    pub policy: SupplyPolicy,
    pub parallelism: Parallelism,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            mix_fraction: 1.0,
            deadline: 2,
            mix: DpMixConfig::default(),
            policy: SupplyPolicy::default(),
            parallelism: Parallelism::Rayon,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("deadline must be at least one round")]
    DeadlineZero,
    #[error("mix fraction {0} outside [0, 1]")]
    MixFraction(f64),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// How one deficit was filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFill {
    pub label: usize,
    pub deficit: usize,
    pub requested: usize,
    pub received: usize,
    pub mixups: usize,
    pub noise: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceOutcome {
    pub dataset: ClientDataset,
    pub fills: Vec<LabelFill>,
    pub trace: Vec<TraceRow>,
    /// Rounds consumed by this requester's session.
    pub rounds: u64,
}

/// Balances one requester against `peers` (indexed by client id; the
/// requester's own slot is never asked). Peers serve from the data they are
/// given, so callers normally pass each peer's real examples.
pub fn run_balance(
    requester: ClientDataset,
    deficits: &[Deficit],
    cfg: &BalanceConfig,
    topology: &Topology,
    peers: &[ClientDataset],
    noise: &GeneratorState,
    seed: u64,
) -> Result<BalanceOutcome, BalanceError> {
    if cfg.deadline == 0 {
        return Err(BalanceError::DeadlineZero);
    }
    if !(0.0..=1.0).contains(&cfg.mix_fraction) {
        return Err(BalanceError::MixFraction(cfg.mix_fraction));
    }
    let me = requester.client_id;
    let session = derive_seed(seed, &[tag::BALANCE, me as u64]);
    let mut rng = stream(session, &[0]);
    let mut dataset = requester;
    let mut trace = Vec::new();
    let mut fills = Vec::with_capacity(deficits.len());
    let mut clock = 0u64;
    let mut seq = 0u64;

    for d in deficits {
        let quota = mix_quota(cfg.mix_fraction, d.amount);
        let mut received: Vec<LabeledImage> = Vec::new();
        if quota > 0 {
            let req = BountyRequest {
                requester: me,
                label: d.label,
                quantity: quota,
                deadline: cfg.deadline,
            };
            let mut outbox = vec![Outgoing {
                src: me,
                dst: Destination::Broadcast,
                seq,
                message: Message::Request(req),
            }];
            seq += 1;
            let start = clock;
            let mut pending: Vec<Delivery> = Vec::new();
            for round in start..start + cfg.deadline {
                let (delivered, hops) =
                    route(std::mem::take(&mut outbox), topology, round, peers.len());
                trace.extend(hops);
                pending.extend(delivered);
                let (due, later): (Vec<Delivery>, Vec<Delivery>) =
                    pending.into_iter().partition(|m| m.round == round + 1);
                pending = later;
                // peers handle their inbox independently; replies keep delivery order
                let replies = par::map_slice(cfg.parallelism, &due, |_, msg| match &msg.message {
                    Message::Request(r) if msg.dst != me => {
                        let responder = &peers[msg.dst];
                        let mix_seed =
                            derive_seed(session, &[d.label as u64, msg.dst as u64, round]);
                        let resp = serve_bounty(
                            responder,
                            r,
                            &cfg.policy,
                            &cfg.mix,
                            mix_seed,
                            Parallelism::Sequential,
                        );
                        (!resp.samples.is_empty()).then_some(Outgoing {
                            src: msg.dst,
                            dst: Destination::Client(me),
                            seq: msg.seq,
                            message: Message::Response(resp),
                        })
                    }
                    _ => None,
                });
                for (msg, reply) in due.into_iter().zip(replies) {
                    if let Message::Response(resp) = msg.message {
                        if msg.dst == me {
                            received.extend(resp.samples);
                        }
                    }
                    outbox.extend(reply);
                }
            }
            clock = start + cfg.deadline;
        }

        let got = received.len();
        if got > quota {
            let mut keep = index::sample(&mut rng, got, quota).into_vec();
            keep.sort_unstable();
            let mut taken: Vec<Option<LabeledImage>> = received.into_iter().map(Some).collect();
            received = keep
                .into_iter()
                .map(|i| taken[i].take().expect("distinct indices"))
                .collect();
        }
        let mixups = got.min(quota);
        let fill = d.amount - mixups;
        let noise_seed = derive_seed(session, &[tag::NOISE_SAMPLE, d.label as u64]);
        let noise_imgs = generate_batch(noise, fill, noise_seed, cfg.parallelism)?;
        dataset.extend(received);
        dataset.extend(noise_imgs.into_iter().map(|img| img.with_label(d.label)));
        fills.push(LabelFill {
            label: d.label,
            deficit: d.amount,
            requested: quota,
            received: got,
            mixups,
            noise: fill,
        });
    }
    Ok(BalanceOutcome {
        dataset,
        fills,
        trace,
        rounds: clock,
    })
}

/// Balances every client against the real data of all others. Sessions are
/// independent, so they run in parallel; outcomes come back in client order.
pub fn balance_all(
    clients: &[ClientDataset],
    targets: &[Vec<usize>],
    cfg: &BalanceConfig,
    topology: &Topology,
    noise: &GeneratorState,
    seed: u64,
) -> Result<Vec<BalanceOutcome>, BalanceError> {
    let snapshots: Vec<ClientDataset> = clients.iter().map(ClientDataset::real_only).collect();
    let inner = BalanceConfig {
        parallelism: Parallelism::Sequential,
        ..*cfg
    };
    par::map_slice(cfg.parallelism, clients, |i, c| {
        let plan = super::plan_deficits(c, &targets[i]);
        run_balance(c.clone(), &plan, &inner, topology, &snapshots, noise, seed)
    })
    .into_iter()
    .collect()
}
