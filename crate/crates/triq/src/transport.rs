//! In-process three-party message fabric with exact byte and round accounting.
//!
//! Every ordered pair of parties gets a FIFO channel. Protocol code advances
//! an epoch counter at fixed points; one "round" is an epoch in which at least
//! one message was sent, regardless of how many messages moved in parallel.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

pub const N_PARTIES: usize = 3;

/// Identity of one of the three computing parties.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Hash, PartialOrd, Ord)]
pub struct PartyId(pub u8);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Party `i+1 mod 3`.
    pub fn next(self) -> PartyId {
        PartyId((self.0 + 1) % 3)
    }

    /// Party `i-1 mod 3`.
    pub fn prev(self) -> PartyId {
        PartyId((self.0 + 2) % 3)
    }
}

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Default)]
struct StatsInner {
    bytes: [[u64; N_PARTIES]; N_PARTIES],
    messages: [[u64; N_PARTIES]; N_PARTIES],
    received: [[u64; N_PARTIES]; N_PARTIES],
    traffic_epochs: BTreeSet<u64>,
}

/// Shared accounting sink for one protocol run.
#[derive(Clone, Default)]
pub struct StatsHandle {
    inner: Arc<Mutex<StatsInner>>,
}

impl StatsHandle {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, from: PartyId, to: PartyId, len: usize, epoch: u64) {
        let mut g = self.inner.lock().unwrap();
        g.bytes[from.index()][to.index()] += len as u64;
        g.messages[from.index()][to.index()] += 1;
        g.traffic_epochs.insert(epoch);
    }

    fn record_recv(&self, from: PartyId, to: PartyId, len: usize) {
        let mut g = self.inner.lock().unwrap();
        g.received[from.index()][to.index()] += len as u64;
    }

    /// Conservation check at a quiescent point (all parties joined): every
    /// byte sent on a pair must have been received on it.
    pub fn assert_conserved(&self) {
        let g = self.inner.lock().unwrap();
        for i in 0..N_PARTIES {
            for j in 0..N_PARTIES {
                assert_eq!(
                    g.bytes[i][j], g.received[i][j],
                    "pair {i}->{j}: sent {} received {}",
                    g.bytes[i][j], g.received[i][j]
                );
            }
        }
    }

    pub fn snapshot(&self) -> CommStats {
        let g = self.inner.lock().unwrap();
        CommStats {
            bytes: g.bytes,
            messages: g.messages,
            rounds: g.traffic_epochs.len() as u64,
        }
    }

    pub fn reset(&self) {
        let mut g = self.inner.lock().unwrap();
        *g = StatsInner::default();
    }
}

/// Immutable snapshot of the traffic counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub bytes: [[u64; N_PARTIES]; N_PARTIES],
    pub messages: [[u64; N_PARTIES]; N_PARTIES],
    pub rounds: u64,
}

impl CommStats {
    pub fn total_bytes(&self) -> u64 {
        self.bytes.iter().flatten().sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.messages.iter().flatten().sum()
    }

    /// Traffic between two snapshots of the same run.
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        let mut out = *self;
        for i in 0..N_PARTIES {
            for j in 0..N_PARTIES {
                out.bytes[i][j] -= earlier.bytes[i][j];
                out.messages[i][j] -= earlier.messages[i][j];
            }
        }
        out.rounds -= earlier.rounds;
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut pairs = serde_json::Map::new();
        for i in 0..N_PARTIES {
            for j in 0..N_PARTIES {
                if i == j {
                    continue;
                }
                pairs.insert(
                    format!("{i}->{j}"),
                    serde_json::json!({
                        "bytes": self.bytes[i][j],
                        "messages": self.messages[i][j],
                    }),
                );
            }
        }
        serde_json::json!({ "pairs": pairs, "rounds": self.rounds })
    }
}

/// Analytical network model: serialization plus one RTT per round.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Link bandwidth in bits per second.
    pub bandwidth_bps: f64,
    /// Round-trip time in seconds.
    pub rtt_s: f64,
}

impl NetworkConfig {
    pub fn new(bandwidth_bps: f64, rtt_s: f64) -> Self {
        assert!(
            bandwidth_bps > 0.0 && rtt_s > 0.0,
            "network parameters must be positive"
        );
        NetworkConfig {
            bandwidth_bps,
            rtt_s,
        }
    }

    /// 5 Gbps, 0.4 ms RTT.
    pub fn lan() -> Self {
        NetworkConfig::new(5e9, 0.4e-3)
    }

    /// 400 Mbps, 40 ms RTT.
    pub fn wan() -> Self {
        NetworkConfig::new(400e6, 40e-3)
    }

    /// `rounds * rtt + total_bits / bandwidth`.
    pub fn estimate_time(&self, stats: &CommStats) -> f64 {
        stats.rounds as f64 * self.rtt_s + stats.total_bytes() as f64 * 8.0 / self.bandwidth_bps
    }
}

struct Packet {
    bytes: Vec<u8>,
}

/// One party's endpoints into the fabric. Not `Sync`: it is moved into the
/// party's thread of control and used sequentially there.
pub struct PartyNet {
    id: PartyId,
    senders: [Option<Sender<Packet>>; N_PARTIES],
    receivers: [Option<Receiver<Packet>>; N_PARTIES],
    epoch: u64,
    stats: StatsHandle,
}

impl PartyNet {
    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn stats(&self) -> &StatsHandle {
        &self.stats
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Queue `payload` for `to`. Counted against the current epoch.
    pub fn send(&mut self, to: PartyId, payload: &[u8]) -> Result<()> {
        if to == self.id {
            return Err(Error::SelfSend(self.id.0));
        }
        let tx = self.senders[to.index()]
            .as_ref()
            .ok_or(Error::ChannelClosed {
                from: self.id.0,
                to: to.0,
            })?;
        tx.send(Packet {
            bytes: payload.to_vec(),
        })
        .map_err(|_| Error::ChannelClosed {
            from: self.id.0,
            to: to.0,
        })?;
        self.stats.record(self.id, to, payload.len(), self.epoch);
        Ok(())
    }

    /// Blocking FIFO receive of the next message from `from`.
    pub fn recv(&mut self, from: PartyId) -> Result<Vec<u8>> {
        if from == self.id {
            return Err(Error::SelfSend(self.id.0));
        }
        let rx = self.receivers[from.index()]
            .as_ref()
            .ok_or(Error::ChannelClosed {
                from: from.0,
                to: self.id.0,
            })?;
        let pkt = rx.recv().map_err(|_| Error::ChannelClosed {
            from: from.0,
            to: self.id.0,
        })?;
        self.stats.record_recv(from, self.id, pkt.bytes.len());
        Ok(pkt.bytes)
    }

    /// Close the current communication epoch. Every party must call this at
    /// the same protocol points so that epoch numbers stay aligned.
    pub fn end_round(&mut self) {
        self.epoch += 1;
    }
}

/// Build the six directed channels of a fresh three-party fabric.
pub fn fabric() -> ([PartyNet; 3], StatsHandle) {
    let stats = StatsHandle::new();
    // tx[i][j]: endpoint used by i to reach j; rx[j][i] is the other end.
    let mut txs: Vec<Vec<Option<Sender<Packet>>>> = vec![
        vec![None, None, None],
        vec![None, None, None],
        vec![None, None, None],
    ];
    let mut rxs: Vec<Vec<Option<Receiver<Packet>>>> = vec![
        vec![None, None, None],
        vec![None, None, None],
        vec![None, None, None],
    ];
    for i in 0..N_PARTIES {
        for j in 0..N_PARTIES {
            if i == j {
                continue;
            }
            let (tx, rx) = channel();
            txs[i][j] = Some(tx);
            rxs[j][i] = Some(rx);
        }
    }
    let mut nets: Vec<PartyNet> = Vec::with_capacity(3);
    for (i, (tx_row, rx_row)) in txs.into_iter().zip(rxs).enumerate() {
        let mut senders: [Option<Sender<Packet>>; 3] = [None, None, None];
        let mut receivers: [Option<Receiver<Packet>>; 3] = [None, None, None];
        for (j, t) in tx_row.into_iter().enumerate() {
            senders[j] = t;
        }
        for (j, r) in rx_row.into_iter().enumerate() {
            receivers[j] = r;
        }
        nets.push(PartyNet {
            id: PartyId(i as u8),
            senders,
            receivers,
            epoch: 0,
            stats: stats.clone(),
        });
    }
    let arr: [PartyNet; 3] = nets.try_into().map_err(|_| ()).unwrap();
    (arr, stats)
}
