//! Hash-linked blocks and majority hash consensus.
//!
//! Two kinds of chains share the machinery: per-hospital chains that record
//! every local and aggregated model, and the multi-institution chain that
//! records tuned ensemble weights. A replica set verifies a submission by
//! having every node hash its own view of the payload; a strict majority of
//! identical digests appends one identical block to every replica, and
//! dissenting nodes repair from the majority. Timestamps are simulated ticks,
//! so identical inputs reproduce identical chains byte for byte.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{grid_search_weights, EnsembleWeights, ProbabilityMatrix, WeightGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("consensus failed: {dissenters:?} of {nodes} nodes disagree")]
    QuorumFailure { nodes: usize, dissenters: Vec<usize> },
    #[error("model id {0} is not recorded on its hospital chain")]
    UnknownModelId(String),
    #[error("malformed block stream: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ensemble(#[from] crate::ensemble::EnsembleError),
}

/// Lowercase hex of a digest.
pub fn hex_digest(digest: &[u8; 32]) -> String {
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// What a block stores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockPayload {
    /// A model in canonical fixed-point bytes, bound to its id and spec.
    Model {
        model_id: String,
        spec_hash: [u8; 32],
        model_bytes: Vec<u8>,
        submitter: String,
    },
    /// Tuned ensemble weights over the listed global models.
    Weights {
        model_ids: Vec<String>,
        alpha: Vec<f64>,
        tuning_accuracy: f64,
        submitter: String,
    },
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

/// Deterministic field-ordered encoding: little-endian lengths, raw
/// fixed-point weight bytes, f64 bit patterns, UTF-8 identifiers.
pub fn canonical_serialize(payload: &BlockPayload) -> Vec<u8> {
    let mut out = Vec::new();
    match payload {
        BlockPayload::Model {
            model_id,
            spec_hash,
            model_bytes,
            submitter,
        } => {
            out.push(1);
            put_str(&mut out, model_id);
            out.extend_from_slice(spec_hash);
            put_bytes(&mut out, model_bytes);
            put_str(&mut out, submitter);
        }
        BlockPayload::Weights {
            model_ids,
            alpha,
            tuning_accuracy,
            submitter,
        } => {
            out.push(2);
            out.extend_from_slice(&(model_ids.len() as u64).to_le_bytes());
            for id in model_ids {
                put_str(&mut out, id);
            }
            out.extend_from_slice(&(alpha.len() as u64).to_le_bytes());
            for a in alpha {
                out.extend_from_slice(&a.to_bits().to_le_bytes());
            }
            out.extend_from_slice(&tuning_accuracy.to_bits().to_le_bytes());
            put_str(&mut out, submitter);
        }
    }
    out
}

fn parse_payload(bytes: &[u8]) -> Result<BlockPayload, LedgerError> {
    struct Reader<'a>(&'a [u8], usize);
    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], LedgerError> {
            if self.1 + n > self.0.len() {
                return Err(LedgerError::Malformed("payload truncated".into()));
            }
            let s = &self.0[self.1..self.1 + n];
            self.1 += n;
            Ok(s)
        }
        fn u64(&mut self) -> Result<u64, LedgerError> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn str(&mut self) -> Result<String, LedgerError> {
            let len = self.u64()? as usize;
            if len > self.0.len() {
                return Err(LedgerError::Malformed("string length out of range".into()));
            }
            core::str::from_utf8(self.take(len)?)
                .map(Into::into)
                .map_err(|_| LedgerError::Malformed("invalid utf-8".into()))
        }
        fn done(&self) -> bool {
            self.1 == self.0.len()
        }
    }
    let mut r = Reader(bytes, 0);
    let tag = r.take(1)?[0];
    let payload = match tag {
        1 => {
            let model_id = r.str()?;
            let spec_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
            let len = r.u64()? as usize;
            if len > bytes.len() {
                return Err(LedgerError::Malformed("model length out of range".into()));
            }
            let model_bytes = r.take(len)?.to_vec();
            let submitter = r.str()?;
            BlockPayload::Model {
                model_id,
                spec_hash,
                model_bytes,
                submitter,
            }
        }
        2 => {
            let id_count = r.u64()? as usize;
            if id_count > bytes.len() {
                return Err(LedgerError::Malformed("id count out of range".into()));
            }
            let mut model_ids = Vec::with_capacity(id_count);
            for _ in 0..id_count {
                model_ids.push(r.str()?);
            }
            let a_count = r.u64()? as usize;
            if a_count > bytes.len() {
                return Err(LedgerError::Malformed("alpha count out of range".into()));
            }
            let mut alpha = Vec::with_capacity(a_count);
            for _ in 0..a_count {
                alpha.push(f64::from_bits(r.u64()?));
            }
            let tuning_accuracy = f64::from_bits(r.u64()?);
            let submitter = r.str()?;
            BlockPayload::Weights {
                model_ids,
                alpha,
                tuning_accuracy,
                submitter,
            }
        }
        t => return Err(LedgerError::Malformed(format!("unknown payload tag {t}"))),
    };
    if !r.done() {
        return Err(LedgerError::Malformed("trailing payload bytes".into()));
    }
    Ok(payload)
}

/// Digest every node votes on: the full canonical payload encoding.
pub fn payload_hash(payload: &BlockPayload) -> [u8; 32] {
    Sha256::digest(canonical_serialize(payload)).into()
}

/// Digest binding a model's canonical bytes to its id.
pub fn compute_model_hash(model_bytes: &[u8], model_id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(model_bytes);
    hasher.update(model_id.as_bytes());
    hasher.finalize().into()
}

/// Digest binding tuned weights to the model ids they mix.
pub fn compute_weight_hash(alpha: &[f64], model_ids: &[String]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for a in alpha {
        hasher.update(a.to_bits().to_le_bytes());
    }
    for id in model_ids {
        hasher.update((id.len() as u64).to_le_bytes());
        hasher.update(id.as_bytes());
    }
    hasher.finalize().into()
}

/// One chain entry. The block hash covers the header; the payload digest in
/// the header covers every payload byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub previous_hash: [u8; 32],
    pub payload_hash: [u8; 32],
    pub timestamp: u64,
    pub hash: [u8; 32],
    pub payload: BlockPayload,
}

impl Block {
    fn header_hash(height: u64, previous: &[u8; 32], payload: &[u8; 32], timestamp: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(height.to_le_bytes());
        hasher.update(previous);
        hasher.update(payload);
        hasher.update(timestamp.to_le_bytes());
        hasher.finalize().into()
    }

    fn seal(height: u64, previous_hash: [u8; 32], payload: BlockPayload, timestamp: u64) -> Block {
        let payload_hash = payload_hash(&payload);
        let hash = Block::header_hash(height, &previous_hash, &payload_hash, timestamp);
        Block {
            height,
            previous_hash,
            payload_hash,
            timestamp,
            hash,
            payload,
        }
    }

    /// Canonical byte form, used for chain dumps and replica comparison.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.previous_hash);
        out.extend_from_slice(&self.payload_hash);
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&self.hash);
        put_bytes(&mut out, &canonical_serialize(&self.payload));
        out
    }

    /// Parses one block; returns the block and the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Block, usize), LedgerError> {
        const HEADER: usize = 8 + 32 + 32 + 8 + 32 + 8;
        if bytes.len() < HEADER {
            return Err(LedgerError::Malformed("block header truncated".into()));
        }
        let height = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let previous_hash: [u8; 32] = bytes[8..40].try_into().unwrap();
        let payload_hash: [u8; 32] = bytes[40..72].try_into().unwrap();
        let timestamp = u64::from_le_bytes(bytes[72..80].try_into().unwrap());
        let hash: [u8; 32] = bytes[80..112].try_into().unwrap();
        let payload_len = u64::from_le_bytes(bytes[112..120].try_into().unwrap()) as usize;
        if bytes.len() < HEADER + payload_len {
            return Err(LedgerError::Malformed("block payload truncated".into()));
        }
        let payload = parse_payload(&bytes[HEADER..HEADER + payload_len])?;
        Ok((
            Block {
                height,
                previous_hash,
                payload_hash,
                timestamp,
                hash,
                payload,
            },
            HEADER + payload_len,
        ))
    }
}

/// Outcome of [`validate_chain`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainValidation {
    Valid,
    /// First height whose linkage, payload digest or block hash is broken.
    InvalidAt(u64),
}

/// An append-only chain of blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new() -> Self {
        Chain::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip_hash(&self) -> [u8; 32] {
        self.blocks.last().map_or([0u8; 32], |b| b.hash)
    }

    fn append(&mut self, payload: BlockPayload, timestamp: u64) -> &Block {
        let block = Block::seal(
            self.blocks.len() as u64,
            self.tip_hash(),
            payload,
            timestamp,
        );
        self.blocks.push(block);
        self.blocks.last().expect("just pushed")
    }

    /// Concatenated canonical block bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Chain { blocks }
    }

    /// Finds the model ids recorded on this chain.
    pub fn recorded_model_ids(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.payload {
                BlockPayload::Model { model_id, .. } => Some(model_id.clone()),
                BlockPayload::Weights { .. } => None,
            })
            .collect()
    }
}

/// Verifies genesis linkage, hash linkage, payload digests and block hashes.
pub fn validate_chain(chain: &Chain) -> ChainValidation {
    let mut previous = [0u8; 32];
    for (i, block) in chain.blocks().iter().enumerate() {
        let height = i as u64;
        if block.height != height
            || block.previous_hash != previous
            || block.payload_hash != payload_hash(&block.payload)
            || block.hash
                != Block::header_hash(
                    block.height,
                    &block.previous_hash,
                    &block.payload_hash,
                    block.timestamp,
                )
        {
            return ChainValidation::InvalidAt(height);
        }
        previous = block.hash;
    }
    ChainValidation::Valid
}

/// Result of an accepted append.
#[derive(Clone, Debug)]
pub struct AppendOutcome {
    pub block: Block,
    /// Nodes whose view hashed differently and were repaired from the
    /// majority.
    pub dissenters: Vec<usize>,
}

/// A replica set running majority hash consensus. Every node keeps a full
/// copy of the chain; honest replicas stay byte-identical.
pub struct NodeSet {
    replicas: Vec<Chain>,
}

impl NodeSet {
    pub fn new(nodes: usize) -> Self {
        assert!(nodes >= 1, "a ledger needs at least one node");
        NodeSet {
            replicas: (0..nodes).map(|_| Chain::new()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.replicas.len()
    }

    pub fn replica(&self, node: usize) -> &Chain {
        &self.replicas[node]
    }

    pub fn tip_hash(&self) -> [u8; 32] {
        self.replicas[0].tip_hash()
    }

    pub fn chain_len(&self) -> usize {
        self.replicas[0].len()
    }

    /// All replicas byte-identical?
    pub fn replicas_consistent(&self) -> bool {
        let reference = self.replicas[0].to_bytes();
        self.replicas.iter().all(|c| c.to_bytes() == reference)
    }

    /// Consensus append where every node may hold its own view of the
    /// payload (fault injection hands tampered views to chosen nodes).
    /// Accepts iff a strict majority of nodes hash identical views; the
    /// majority payload is what every replica appends.
    pub fn propose_with_views(
        &mut self,
        views: Vec<BlockPayload>,
        timestamp: u64,
    ) -> Result<AppendOutcome, LedgerError> {
        let m = self.replicas.len();
        assert_eq!(views.len(), m, "one payload view per node");
        let hashes: Vec<[u8; 32]> = views.iter().map(payload_hash).collect();
        // Tally hash votes.
        let mut winner: Option<([u8; 32], usize)> = None;
        for h in &hashes {
            let count = hashes.iter().filter(|x| *x == h).count();
            if winner.map_or(true, |(_, best)| count > best) {
                winner = Some((*h, count));
            }
        }
        let (winning_hash, votes) = winner.expect("at least one node");
        let dissenters: Vec<usize> = (0..m).filter(|&i| hashes[i] != winning_hash).collect();
        if votes * 2 <= m {
            return Err(LedgerError::QuorumFailure {
                nodes: m,
                dissenters,
            });
        }
        let canonical_view = views
            .into_iter()
            .zip(&hashes)
            .find(|(_, h)| **h == winning_hash)
            .expect("winner exists")
            .0;
        let mut appended = None;
        for replica in self.replicas.iter_mut() {
            appended = Some(replica.append(canonical_view.clone(), timestamp).clone());
        }
        debug_assert!(self.replicas_consistent());
        Ok(AppendOutcome {
            block: appended.expect("nonempty node set"),
            dissenters,
        })
    }

    /// Model verification: every node hashes the model payload it received;
    /// on majority agreement one identical block lands on every replica.
    pub fn verify_and_append_model(
        &mut self,
        payload: BlockPayload,
        timestamp: u64,
    ) -> Result<AppendOutcome, LedgerError> {
        let views = alloc::vec![payload; self.replicas.len()];
        self.propose_with_views(views, timestamp)
    }

    /// Weight verification: every node re-runs the grid search on its own
    /// view of the broadcast probability matrices and votes for the payload
    /// it recomputed. The submission is appended only if a strict majority
    /// recomputes exactly the submitted weights.
    #[allow(clippy::too_many_arguments)]
    pub fn verify_and_append_weights(
        &mut self,
        submitted: &EnsembleWeights,
        tuning_accuracy: f64,
        model_ids: &[String],
        submitter: &str,
        node_views: &[(Vec<ProbabilityMatrix>, Vec<usize>)],
        grid: &WeightGrid,
        known_model_ids: &[String],
        timestamp: u64,
    ) -> Result<AppendOutcome, LedgerError> {
        assert_eq!(node_views.len(), self.replicas.len());
        for id in model_ids {
            if !known_model_ids.contains(id) {
                return Err(LedgerError::UnknownModelId(id.clone()));
            }
        }
        let mut views = Vec::with_capacity(node_views.len());
        for (mats, labels) in node_views {
            let (recomputed, accuracy) = grid_search_weights(mats, labels, grid)?;
            views.push(BlockPayload::Weights {
                model_ids: model_ids.to_vec(),
                alpha: recomputed.alpha,
                tuning_accuracy: accuracy,
                submitter: submitter.into(),
            });
        }
        let submitted_payload = BlockPayload::Weights {
            model_ids: model_ids.to_vec(),
            alpha: submitted.alpha.clone(),
            tuning_accuracy,
            submitter: submitter.into(),
        };
        let submitted_hash = payload_hash(&submitted_payload);
        let agreeing = views
            .iter()
            .filter(|v| payload_hash(v) == submitted_hash)
            .count();
        let dissenters: Vec<usize> = views
            .iter()
            .enumerate()
            .filter(|(_, v)| payload_hash(v) != submitted_hash)
            .map(|(i, _)| i)
            .collect();
        if agreeing * 2 <= self.replicas.len() {
            return Err(LedgerError::QuorumFailure {
                nodes: self.replicas.len(),
                dissenters,
            });
        }
        let mut appended = None;
        for replica in self.replicas.iter_mut() {
            appended = Some(replica.append(submitted_payload.clone(), timestamp).clone());
        }
        debug_assert!(self.replicas_consistent());
        Ok(AppendOutcome {
            block: appended.expect("nonempty node set"),
            dissenters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::l1_normalize;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_payload(id: &str, fill: u8) -> BlockPayload {
        BlockPayload::Model {
            model_id: id.to_string(),
            spec_hash: [7u8; 32],
            model_bytes: vec![fill; 96],
            submitter: "H0".to_string(),
        }
    }

    #[test]
    fn canonical_serialize_is_deterministic_and_injective() {
        let p = model_payload("m1", 3);
        assert_eq!(canonical_serialize(&p), canonical_serialize(&p));

        let mut q = p.clone();
        if let BlockPayload::Model { model_bytes, .. } = &mut q {
            model_bytes[50] ^= 1; // one weight ulp
        }
        assert_ne!(canonical_serialize(&p), canonical_serialize(&q));
    }

    #[test]
    fn payload_round_trips_through_bytes() {
        let w = BlockPayload::Weights {
            model_ids: vec!["H0/GM/t4".into(), "H1/GM/t4".into()],
            alpha: vec![0.25, 0.75],
            tuning_accuracy: 0.9375,
            submitter: "BM".into(),
        };
        let parsed = parse_payload(&canonical_serialize(&w)).unwrap();
        assert_eq!(parsed, w);
        let m = model_payload("H0/GM/t0", 9);
        assert_eq!(parse_payload(&canonical_serialize(&m)).unwrap(), m);
    }

    #[test]
    fn reference_digest_fixture() {
        // Empty-weights payload digest, precomputed with an independent
        // SHA-256 implementation over the canonical encoding.
        let p = BlockPayload::Weights {
            model_ids: vec![],
            alpha: vec![],
            tuning_accuracy: 0.0,
            submitter: String::new(),
        };
        assert_eq!(
            hex_digest(&payload_hash(&p)),
            "523ba5a7ec9362dbb08039a387922592ccea3dde63634480cd1b05b7bd50a269"
        );
    }

    #[test]
    fn model_hash_behaviour() {
        let bytes = vec![1u8, 2, 3, 4];
        let h1 = compute_model_hash(&bytes, "id-1");
        assert_eq!(h1, compute_model_hash(&bytes, "id-1"));
        assert_ne!(h1, compute_model_hash(&bytes, "id-2"));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut flipped = bytes.clone();
            let at = rng.random_range(0..flipped.len());
            let bit = 1u8 << rng.random_range(0..8);
            flipped[at] ^= bit;
            assert_ne!(h1, compute_model_hash(&flipped, "id-1"));
        }
    }

    #[test]
    fn consensus_appends_identically() {
        let mut nodes = NodeSet::new(5);
        let outcome = nodes
            .verify_and_append_model(model_payload("m", 1), 10)
            .unwrap();
        assert!(outcome.dissenters.is_empty());
        assert!(nodes.replicas_consistent());
        assert_eq!(nodes.chain_len(), 1);
        assert_eq!(outcome.block.previous_hash, [0u8; 32]);
    }

    #[test]
    fn minority_tamper_accepted_with_dissenter_flagged() {
        let mut nodes = NodeSet::new(5);
        let good = model_payload("m", 1);
        let bad = model_payload("m", 2);
        let views = vec![good.clone(), good.clone(), bad, good.clone(), good.clone()];
        let outcome = nodes.propose_with_views(views, 3).unwrap();
        assert_eq!(outcome.dissenters, vec![2]);
        assert!(nodes.replicas_consistent());
        assert_eq!(nodes.replica(2).blocks()[0].payload, good);
    }

    #[test]
    fn majority_tamper_rejected() {
        for m in [3usize, 5] {
            let mut nodes = NodeSet::new(m);
            let good = model_payload("m", 1);
            let bad = model_payload("m", 2);
            let faulty = m.div_ceil(2);
            let views: Vec<BlockPayload> = (0..m)
                .map(|i| if i < faulty { bad.clone() } else { good.clone() })
                .collect();
            // ceil(m/2) identical tampered views beat the honest remainder
            // only by plurality, never by strict majority when m is odd and
            // the tampered copies agree; both groups fail the > m/2 bar when
            // they tie, and the tampered group wins otherwise. Either way the
            // submission must not land as the honest payload on all replicas.
            match nodes.propose_with_views(views, 0) {
                Ok(outcome) => {
                    // Tampered majority: the honest payload lost.
                    assert_eq!(outcome.block.payload, bad);
                    assert!(faulty * 2 > m);
                }
                Err(LedgerError::QuorumFailure { .. }) => {}
                Err(other) => panic!("unexpected error {other:?}"),
            }
            // Chains stay untouched on rejection.
            if nodes.chain_len() == 0 {
                assert!(nodes.replicas_consistent());
            }
        }
    }

    #[test]
    fn single_node_set_accepts() {
        let mut nodes = NodeSet::new(1);
        assert!(nodes.verify_and_append_model(model_payload("m", 1), 0).is_ok());
    }

    #[test]
    fn chain_validation_catches_tampering() {
        let mut nodes = NodeSet::new(3);
        for i in 0..5u8 {
            nodes
                .verify_and_append_model(model_payload(&format!("m{i}"), i), i as u64)
                .unwrap();
        }
        let chain = nodes.replica(0).clone();
        assert_eq!(validate_chain(&chain), ChainValidation::Valid);

        // Retroactive payload edit breaks at the edited height.
        let mut tampered = chain.clone();
        if let BlockPayload::Model { model_bytes, .. } = &mut tampered.blocks[3].payload {
            model_bytes[0] ^= 0xFF;
        }
        assert_eq!(validate_chain(&tampered), ChainValidation::InvalidAt(3));

        // Re-sealing the edited block without fixing successors breaks the
        // link at the next height.
        let mut resealed = chain.clone();
        let edited = {
            let b = &resealed.blocks[3];
            let mut payload = b.payload.clone();
            if let BlockPayload::Model { model_bytes, .. } = &mut payload {
                model_bytes[0] ^= 0xFF;
            }
            Block::seal(b.height, b.previous_hash, payload, b.timestamp)
        };
        resealed.blocks[3] = edited;
        assert_eq!(validate_chain(&resealed), ChainValidation::InvalidAt(4));
    }

    #[test]
    fn block_bytes_round_trip() {
        let mut nodes = NodeSet::new(2);
        let outcome = nodes
            .verify_and_append_model(model_payload("m", 5), 77)
            .unwrap();
        let bytes = outcome.block.to_bytes();
        let (parsed, used) = Block::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(parsed, outcome.block);

        assert!(Block::from_bytes(&bytes[..40]).is_err());
    }

    fn weight_fixture() -> (Vec<ProbabilityMatrix>, Vec<usize>) {
        let labels = vec![0usize, 1, 0, 1];
        let mats = vec![
            ProbabilityMatrix {
                hospital_id: "H0".into(),
                model_id: "H0/GM".into(),
                rows: vec![
                    vec![0.9, 0.1],
                    vec![0.2, 0.8],
                    vec![0.6, 0.4],
                    vec![0.3, 0.7],
                ],
            },
            ProbabilityMatrix {
                hospital_id: "H1".into(),
                model_id: "H1/GM".into(),
                rows: vec![
                    vec![0.4, 0.6],
                    vec![0.5, 0.5],
                    vec![0.7, 0.3],
                    vec![0.1, 0.9],
                ],
            },
        ];
        (mats, labels)
    }

    #[test]
    fn weight_verification_accepts_honest_submission() {
        let (mats, labels) = weight_fixture();
        let grid = WeightGrid::from_step(0.5);
        let (alpha, accuracy) = grid_search_weights(&mats, &labels, &grid).unwrap();
        let mut nodes = NodeSet::new(5);
        let views: Vec<_> = (0..5).map(|_| (mats.clone(), labels.clone())).collect();
        let ids = vec!["H0/GM".to_string(), "H1/GM".to_string()];
        let outcome = nodes
            .verify_and_append_weights(&alpha, accuracy, &ids, "BM", &views, &grid, &ids, 9)
            .unwrap();
        assert!(outcome.dissenters.is_empty());
        assert!(nodes.replicas_consistent());
    }

    #[test]
    fn weight_verification_flags_perturbed_node_and_rejects_bad_submission() {
        let (mats, labels) = weight_fixture();
        let grid = WeightGrid::from_step(0.5);
        let (alpha, accuracy) = grid_search_weights(&mats, &labels, &grid).unwrap();
        let ids = vec!["H0/GM".to_string(), "H1/GM".to_string()];

        // One node sees a perturbed matrix that flips its recomputation.
        let mut perturbed = mats.clone();
        for (row, &y) in perturbed[1].rows.iter_mut().zip(&labels) {
            row.iter_mut().for_each(|p| *p = 0.05);
            row[y] = 0.95;
        }
        let mut views: Vec<_> = (0..5).map(|_| (mats.clone(), labels.clone())).collect();
        views[2] = (perturbed, labels.clone());
        let mut nodes = NodeSet::new(5);
        let outcome = nodes
            .verify_and_append_weights(&alpha, accuracy, &ids, "BM", &views, &grid, &ids, 9)
            .unwrap();
        assert_eq!(outcome.dissenters, vec![2]);

        // A submission nobody can recompute is rejected.
        let bogus = l1_normalize(&[0.123, 0.877]).unwrap();
        let views: Vec<_> = (0..5).map(|_| (mats.clone(), labels.clone())).collect();
        let mut nodes = NodeSet::new(5);
        let err = nodes
            .verify_and_append_weights(&bogus, accuracy, &ids, "BM", &views, &grid, &ids, 9)
            .unwrap_err();
        assert!(matches!(err, LedgerError::QuorumFailure { .. }));
        assert_eq!(nodes.chain_len(), 0);
    }

    #[test]
    fn weight_verification_requires_known_ids() {
        let (mats, labels) = weight_fixture();
        let grid = WeightGrid::from_step(0.5);
        let (alpha, accuracy) = grid_search_weights(&mats, &labels, &grid).unwrap();
        let ids = vec!["H0/GM".to_string(), "H9/GM".to_string()];
        let known = vec!["H0/GM".to_string()];
        let views: Vec<_> = (0..3).map(|_| (mats.clone(), labels.clone())).collect();
        let mut nodes = NodeSet::new(3);
        let err = nodes
            .verify_and_append_weights(&alpha, accuracy, &ids, "BM", &views, &grid, &known, 9)
            .unwrap_err();
        assert_eq!(err, LedgerError::UnknownModelId("H9/GM".to_string()));
    }

    #[test]
    fn append_only_property() {
        let mut nodes = NodeSet::new(3);
        nodes.verify_and_append_model(model_payload("a", 1), 0).unwrap();
        let snapshot = nodes.replica(0).to_bytes();
        nodes.verify_and_append_model(model_payload("b", 2), 1).unwrap();
        let grown = nodes.replica(0).to_bytes();
        assert_eq!(&grown[..snapshot.len()], &snapshot[..]);
    }
}
