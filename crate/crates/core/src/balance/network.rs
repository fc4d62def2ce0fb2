//! Round-based message routing over a star or an explicit peer graph.
//!
//! Every message sent in round `t` is delivered in round `t + 1`. Under
//! [`Topology::ServerStar`] a client-to-client message is relayed by the
//! server (two hops, both recorded in the trace). Under
//! [`Topology::PeerEdges`] a message is delivered only along an existing
//! edge and otherwise dropped without notice.

use super::{BountyRequest, BountyResponse};
use crate::image::Provenance;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    ServerStar,
    /// Undirected edges between client ids, stored with `a < b`.
    PeerEdges(BTreeSet<(usize, usize)>),
}

impl Topology {
    pub fn peer_edges<I: IntoIterator<Item = (usize, usize)>>(edges: I) -> Self {
        Topology::PeerEdges(
            edges
                .into_iter()
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect(),
        )
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        match self {
            Topology::ServerStar => a != b,
            Topology::PeerEdges(edges) => edges.contains(&(a.min(b), a.max(b))),
        }
    }

    /// Parses `star` or a comma-separated edge list such as `0-1,1-2`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let t = text.trim();
        if t == "star" {
            return Ok(Topology::ServerStar);
        }
        if t.is_empty() || t == "none" {
            return Ok(Topology::PeerEdges(BTreeSet::new()));
        }
        let mut edges = Vec::new();
        for part in t.split(',') {
            let (a, b) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| format!("bad edge '{part}'"))?;
            let a: usize = a.trim().parse().map_err(|_| format!("bad edge '{part}'"))?;
            let b: usize = b.trim().parse().map_err(|_| format!("bad edge '{part}'"))?;
            edges.push((a, b));
        }
        Ok(Topology::peer_edges(edges))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Client(usize),
    Server,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Client(i) => write!(f, "{i}"),
            NodeId::Server => f.write_str("server"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(BountyRequest),
    Response(BountyResponse),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Request(_) => "request",
            Message::Response(_) => "response",
        }
    }

    fn label_and_count(&self) -> (usize, usize) {
        match self {
            Message::Request(r) => (r.label, r.quantity),
            Message::Response(r) => (r.label, r.samples.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Client(usize),
    /// Every other client reachable from the sender.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub src: usize,
    pub dst: Destination,
    pub seq: u64,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub round: u64,
    pub src: usize,
    pub dst: usize,
    pub seq: u64,
    pub message: Message,
}

/// One hop of one message, for the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u64,
    pub msg_type: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub label: usize,
    pub count: usize,
    /// Provenances carried by the payload (empty for requests).
    #[serde(skip)]
    pub payload: Vec<Provenance>,
}

/// Routes the messages sent in round `round` among `num_clients` clients.
/// Deliveries come back ordered by `(round, sender, sequence)`, then
/// destination.
pub fn route(
    mut outbox: Vec<Outgoing>,
    topology: &Topology,
    round: u64,
    num_clients: usize,
) -> (Vec<Delivery>, Vec<TraceRow>) {
    outbox.sort_by_key(|o| (o.src, o.seq));
    let mut deliveries = Vec::new();
    let mut trace = Vec::new();
    for out in outbox {
        let targets: Vec<usize> = match out.dst {
            Destination::Client(d) => vec![d],
            Destination::Broadcast => (0..num_clients).filter(|&d| d != out.src).collect(),
        };
        let (label, count) = out.message.label_and_count();
        let payload: Vec<Provenance> = match &out.message {
            Message::Response(r) => r.samples.iter().fold(Vec::new(), |mut acc, s| {
                if !acc.contains(&s.provenance) {
                    acc.push(s.provenance);
                }
                acc
            }),
            Message::Request(_) => Vec::new(),
        };
        let row = |round, src, dst| TraceRow {
            round,
            msg_type: out.message.kind().to_string(),
            src,
            dst,
            label,
            count,
            payload: payload.clone(),
        };
        match topology {
            Topology::ServerStar => {
                let reachable: Vec<usize> = targets
                    .into_iter()
                    .filter(|&d| d < num_clients && d != out.src)
                    .collect();
                if reachable.is_empty() {
                    continue;
                }
                trace.push(row(round, NodeId::Client(out.src), NodeId::Server));
                for d in reachable {
                    trace.push(row(round + 1, NodeId::Server, NodeId::Client(d)));
                    deliveries.push(Delivery {
                        round: round + 1,
                        src: out.src,
                        dst: d,
                        seq: out.seq,
                        message: out.message.clone(),
                    });
                }
            }
            Topology::PeerEdges(_) => {
                for d in targets
                    .into_iter()
                    .filter(|&d| d < num_clients && topology.connected(out.src, d))
                {
                    trace.push(row(round + 1, NodeId::Client(out.src), NodeId::Client(d)));
                    deliveries.push(Delivery {
                        round: round + 1,
                        src: out.src,
                        dst: d,
                        seq: out.seq,
                        message: out.message.clone(),
                    });
                }
            }
        }
    }
    (deliveries, trace)
}

/// CSV with columns `round,msg_type,src,dst,label,count`.
pub fn write_trace<W: Write>(mut w: W, rows: &[TraceRow]) -> io::Result<()> {
    writeln!(w, "round,msg_type,src,dst,label,count")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.round, r.msg_type, r.src, r.dst, r.label, r.count
        )?;
    }
    Ok(())
}
