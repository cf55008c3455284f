//! The simulated message bus.
//!
//! Every actor interaction in the simulator goes through one bus so a run can
//! be audited after the fact: logical time is the tick counter (one tick per
//! message), and each record keeps sender, receiver, kind and payload size.
//! Records never carry payload bytes; what each kind is allowed to contain is
//! part of its contract, which is what the privacy audit checks.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ring::RingElement;

/// Which ledger a node belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ChainTag {
    /// A hospital's private chain.
    Hospital(u16),
    /// The shared multi-institution chain.
    Institutions,
}

/// Addressable actors in the simulation.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Endpoint {
    /// Edge server `index` inside a hospital.
    Edge { hospital: u16, index: u16 },
    /// A hospital's central server.
    Central { hospital: u16 },
    /// A hospital acting as one party of the secure-computation group.
    Party { hospital: u16 },
    /// The trusted dealer.
    Dealer,
    /// A ledger replica.
    LedgerNode { chain: ChainTag, index: u16 },
    /// The coordination point that collects probabilities and tunes weights.
    Cloud,
}

impl Endpoint {
    /// The hospital an endpoint belongs to, if any.
    pub fn hospital(self) -> Option<u16> {
        match self {
            Endpoint::Edge { hospital, .. }
            | Endpoint::Central { hospital }
            | Endpoint::Party { hospital } => Some(hospital),
            Endpoint::LedgerNode {
                chain: ChainTag::Hospital(hospital),
                ..
            } => Some(hospital),
            _ => None,
        }
    }
}

/// Message classification used by the audits.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum MsgKind {
    /// Plaintext global model pushed to an edge for local training.
    ModelBroadcast,
    /// Plaintext local model returned to the hospital's central server.
    LocalModelUpload,
    /// Correlated randomness provisioning at session setup.
    DealerSetup,
    /// Secret shares in transit (weights, inputs, logits, bit shares).
    ShareTransfer,
    /// Opened Beaver masks (epsilon/delta) or truncation masks.
    OpenedMask,
    /// Opened masked bits from boolean gates and bit lifts.
    OpenedBits,
    /// True labels accompanying an evaluation.
    Labels,
    /// Decrypted per-model output probabilities.
    ProbabilityMatrix,
    /// Payload submitted to ledger nodes for verification.
    LedgerSubmit,
    /// A node's hash vote during consensus.
    LedgerHashVote,
    /// Commit of an accepted block to a replica.
    LedgerBlockCommit,
    /// Replica repair from a majority peer.
    LedgerSync,
    /// Run metrics reported for bookkeeping.
    Metrics,
}

/// Kinds that may legitimately cross a hospital boundary. Everything these
/// messages carry is either a share, an opened one-time mask, or data the
/// tuning step is defined to receive.
const CROSS_HOSPITAL_ALLOWED: &[MsgKind] = &[
    MsgKind::DealerSetup,
    MsgKind::ShareTransfer,
    MsgKind::OpenedMask,
    MsgKind::OpenedBits,
    MsgKind::Labels,
    MsgKind::ProbabilityMatrix,
    MsgKind::LedgerSubmit,
    MsgKind::LedgerHashVote,
    MsgKind::LedgerBlockCommit,
    MsgKind::LedgerSync,
    MsgKind::Metrics,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub tick: u64,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub kind: MsgKind,
    pub bytes: u64,
}

/// Totally ordered log of everything sent during a run.
#[derive(Default)]
pub struct MessageBus {
    tick: u64,
    records: Vec<MessageRecord>,
    bytes_total: u64,
}

impl MessageBus {
    pub fn new() -> Self {
        MessageBus::default()
    }

    /// Logs one message and advances logical time. Returns the send tick.
    pub fn send(&mut self, sender: Endpoint, receiver: Endpoint, kind: MsgKind, bytes: u64) -> u64 {
        let tick = self.tick;
        self.records.push(MessageRecord {
            tick,
            sender,
            receiver,
            kind,
            bytes,
        });
        self.tick += 1;
        self.bytes_total += bytes;
        tick
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn message_count(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_total
    }
}

/// First record that moves disallowed content across a hospital boundary.
pub fn privacy_violation(records: &[MessageRecord]) -> Option<&MessageRecord> {
    records.iter().find(|r| {
        match (r.sender.hospital(), r.receiver.hospital()) {
            (Some(a), Some(b)) if a != b => !CROSS_HOSPITAL_ALLOWED.contains(&r.kind),
            // Traffic to or from shared infrastructure (dealer, cloud, BM
            // nodes) leaves some hospital's trust domain just the same.
            (Some(_), None) | (None, Some(_)) => !CROSS_HOSPITAL_ALLOWED.contains(&r.kind),
            _ => false,
        }
    })
}

/// Opens shared values for a fixed group of parties, logging the share
/// broadcasts and tallying how much was revealed.
///
/// This is the only place the secure kernels reveal anything: every opened
/// ring element or bit word passes through here.
pub struct Exchange<'a> {
    bus: &'a mut MessageBus,
    parties: Vec<Endpoint>,
    sharing_rng: ChaCha8Rng,
    opened_ring_values: u64,
    opened_bit_words: u64,
}

impl<'a> Exchange<'a> {
    /// Group of `h` standalone parties (used by kernels and tests).
    pub fn for_parties(bus: &'a mut MessageBus, parties: u16, session_seed: u64) -> Self {
        let endpoints = (0..parties).map(|p| Endpoint::Party { hospital: p }).collect();
        Exchange::with_endpoints(bus, endpoints, session_seed)
    }

    /// Group with explicit endpoints (one per party, in party order).
    pub fn with_endpoints(
        bus: &'a mut MessageBus,
        parties: Vec<Endpoint>,
        session_seed: u64,
    ) -> Self {
        assert!(parties.len() >= 2);
        Exchange {
            bus,
            parties,
            sharing_rng: ChaCha8Rng::seed_from_u64(session_seed ^ 0x5ee3_ba5e),
            opened_ring_values: 0,
            opened_bit_words: 0,
        }
    }

    pub fn party_count(&self) -> u16 {
        self.parties.len() as u16
    }

    /// Party-local randomness for fresh sub-sharings inside protocols.
    pub fn sharing_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.sharing_rng
    }

    /// Ring elements opened so far (one per element per open call).
    pub fn opened_ring_values(&self) -> u64 {
        self.opened_ring_values
    }

    /// Bit words opened so far.
    pub fn opened_bit_words(&self) -> u64 {
        self.opened_bit_words
    }

    fn broadcast(&mut self, kind: MsgKind, bytes: u64) {
        for s in 0..self.parties.len() {
            for r in 0..self.parties.len() {
                if s != r {
                    self.bus.send(self.parties[s], self.parties[r], kind, bytes);
                }
            }
        }
    }

    /// Opens additively shared ring values: every party broadcasts its share
    /// vector and locally sums.
    pub fn open_ring(&mut self, shares: &[Vec<RingElement>]) -> Vec<RingElement> {
        debug_assert_eq!(shares.len(), self.parties.len());
        let n = shares[0].len();
        self.broadcast(MsgKind::OpenedMask, n as u64 * 8);
        self.opened_ring_values += n as u64;
        let mut out = alloc::vec![RingElement::ZERO; n];
        for party in shares {
            for (acc, &s) in out.iter_mut().zip(party) {
                *acc = *acc + s;
            }
        }
        out
    }

    /// Opens XOR-shared bit words.
    pub fn open_words(&mut self, shares: &[Vec<u64>]) -> Vec<u64> {
        debug_assert_eq!(shares.len(), self.parties.len());
        let n = shares[0].len();
        self.broadcast(MsgKind::OpenedBits, n as u64 * 8);
        self.opened_bit_words += n as u64;
        let mut out = alloc::vec![0u64; n];
        for party in shares {
            for (acc, &s) in out.iter_mut().zip(party) {
                *acc ^= s;
            }
        }
        out
    }

    /// Logs one party distributing fresh bit shares of its own material.
    pub fn log_bit_share_distribution(&mut self, from_party: usize, bytes: u64) {
        let sender = self.parties[from_party];
        for r in 0..self.parties.len() {
            if r != from_party {
                self.bus
                    .send(sender, self.parties[r], MsgKind::ShareTransfer, bytes);
            }
        }
    }

    /// Logs an arbitrary message alongside the protocol traffic.
    pub fn log_message(&mut self, sender: Endpoint, receiver: Endpoint, kind: MsgKind, bytes: u64) {
        self.bus.send(sender, receiver, kind, bytes);
    }

    /// Logs a value holder sending one share vector to each party.
    pub fn log_share_fanout(&mut self, sender: Endpoint, bytes_per_party: u64) {
        for r in 0..self.parties.len() {
            self.bus
                .send(sender, self.parties[r], MsgKind::ShareTransfer, bytes_per_party);
        }
    }

    /// Logs every party returning its result shares to one collector.
    pub fn log_share_collect(&mut self, receiver: Endpoint, bytes_per_party: u64) {
        for s in 0..self.parties.len() {
            self.bus
                .send(self.parties[s], receiver, MsgKind::ShareTransfer, bytes_per_party);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_advance_per_message() {
        let mut bus = MessageBus::new();
        let e0 = Endpoint::Party { hospital: 0 };
        let e1 = Endpoint::Party { hospital: 1 };
        assert_eq!(bus.send(e0, e1, MsgKind::ShareTransfer, 8), 0);
        assert_eq!(bus.send(e1, e0, MsgKind::ShareTransfer, 8), 1);
        assert_eq!(bus.tick(), 2);
        assert_eq!(bus.bytes_total(), 16);
    }

    #[test]
    fn privacy_audit_flags_cross_hospital_models() {
        let mut bus = MessageBus::new();
        bus.send(
            Endpoint::Central { hospital: 0 },
            Endpoint::Edge { hospital: 0, index: 1 },
            MsgKind::ModelBroadcast,
            64,
        );
        assert!(privacy_violation(bus.records()).is_none());

        bus.send(
            Endpoint::Central { hospital: 0 },
            Endpoint::Party { hospital: 1 },
            MsgKind::ModelBroadcast,
            64,
        );
        let bad = privacy_violation(bus.records()).unwrap();
        assert_eq!(bad.kind, MsgKind::ModelBroadcast);
    }

    #[test]
    fn open_ring_counts_and_logs() {
        let mut bus = MessageBus::new();
        let mut ex = Exchange::for_parties(&mut bus, 3, 1);
        let shares = alloc::vec![
            alloc::vec![RingElement::new(1), RingElement::new(2)],
            alloc::vec![RingElement::new(10), RingElement::new(20)],
            alloc::vec![RingElement::new(100), RingElement::new(200)],
        ];
        let opened = ex.open_ring(&shares);
        assert_eq!(opened, alloc::vec![RingElement::new(111), RingElement::new(222)]);
        assert_eq!(ex.opened_ring_values(), 2);
        drop(ex);
        assert_eq!(bus.message_count(), 6);
    }
}
