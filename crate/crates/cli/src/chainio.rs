//! Chain dumps: a length-prefixed binary block stream plus a human-readable
//! JSON index, bit-exact across platforms.

use std::path::Path;

use serde::Serialize;

use hefl_core::ledger::{hex_digest, Block, BlockPayload, Chain};

const MAGIC: &[u8; 8] = b"HEFLCHN1";

/// Why a dump could not be loaded at all (as opposed to failing validation).
#[derive(Debug)]
pub enum ChainLoadError {
    /// Missing, empty, wrong magic, or an unreadable header.
    Unreadable(String),
    /// The stream is framed correctly up to this height, where a block fails
    /// to parse.
    CorruptAt { height: u64, reason: String },
}

impl std::fmt::Display for ChainLoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainLoadError::Unreadable(reason) => write!(f, "unreadable chain dump: {reason}"),
            ChainLoadError::CorruptAt { height, reason } => {
                write!(f, "corrupt block at height {height}: {reason}")
            }
        }
    }
}

impl std::error::Error for ChainLoadError {}

/// Serializes a chain to its binary dump form.
pub fn chain_to_dump(chain: &Chain) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(chain.len() as u32).to_le_bytes());
    out.extend_from_slice(&chain.to_bytes());
    out
}

/// Parses a binary dump back into a chain.
pub fn dump_to_chain(bytes: &[u8]) -> Result<Chain, ChainLoadError> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(ChainLoadError::Unreadable("file too short".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(ChainLoadError::Unreadable("bad magic".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut blocks = Vec::with_capacity(count);
    let mut offset = 12usize;
    for height in 0..count {
        let (block, used) =
            Block::from_bytes(&bytes[offset..]).map_err(|e| ChainLoadError::CorruptAt {
                height: height as u64,
                reason: e.to_string(),
            })?;
        offset += used;
        blocks.push(block);
    }
    if offset != bytes.len() {
        return Err(ChainLoadError::CorruptAt {
            height: count as u64,
            reason: "trailing bytes after final block".into(),
        });
    }
    Ok(Chain::from_blocks(blocks))
}

#[derive(Serialize)]
struct IndexEntry {
    height: u64,
    hash: String,
    previous_hash: String,
    payload_hash: String,
    timestamp: u64,
    payload_type: &'static str,
    submitter: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_ids: Option<Vec<String>>,
}

/// Writes `<path>` (binary dump) and `<path>.index.json` (readable index).
pub fn write_chain(path: &Path, chain: &Chain) -> std::io::Result<()> {
    std::fs::write(path, chain_to_dump(chain))?;
    let entries: Vec<IndexEntry> = chain
        .blocks()
        .iter()
        .map(|b| {
            let (payload_type, submitter, model_id, model_ids) = match &b.payload {
                BlockPayload::Model {
                    model_id,
                    submitter,
                    ..
                } => ("model", submitter.clone(), Some(model_id.clone()), None),
                BlockPayload::Weights {
                    model_ids,
                    submitter,
                    ..
                } => ("weights", submitter.clone(), None, Some(model_ids.clone())),
            };
            IndexEntry {
                height: b.height,
                hash: hex_digest(&b.hash),
                previous_hash: hex_digest(&b.previous_hash),
                payload_hash: hex_digest(&b.payload_hash),
                timestamp: b.timestamp,
                payload_type,
                submitter,
                model_id,
                model_ids,
            }
        })
        .collect();
    let index_path = path.with_extension(format!(
        "{}.index.json",
        path.extension().and_then(|e| e.to_str()).unwrap_or("chain")
    ));
    std::fs::write(index_path, serde_json::to_vec_pretty(&entries)?)?;
    Ok(())
}

/// Reads a binary dump from disk.
pub fn read_chain(path: &Path) -> Result<Chain, ChainLoadError> {
    let bytes =
        std::fs::read(path).map_err(|e| ChainLoadError::Unreadable(format!("{e}")))?;
    if bytes.is_empty() {
        return Err(ChainLoadError::Unreadable("file is empty".into()));
    }
    dump_to_chain(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hefl_core::ledger::{validate_chain, ChainValidation, NodeSet};

    fn sample_chain() -> Chain {
        let mut nodes = NodeSet::new(3);
        for i in 0..4u8 {
            nodes
                .verify_and_append_model(
                    BlockPayload::Model {
                        model_id: format!("m{i}"),
                        spec_hash: [i; 32],
                        model_bytes: vec![i; 64],
                        submitter: "H0".into(),
                    },
                    i as u64,
                )
                .unwrap();
        }
        nodes.replica(0).clone()
    }

    #[test]
    fn dump_round_trips() {
        let chain = sample_chain();
        let dump = chain_to_dump(&chain);
        let loaded = dump_to_chain(&dump).unwrap();
        assert_eq!(loaded.to_bytes(), chain.to_bytes());
        assert_eq!(validate_chain(&loaded), ChainValidation::Valid);
    }

    #[test]
    fn dump_is_deterministic() {
        let chain = sample_chain();
        assert_eq!(chain_to_dump(&chain), chain_to_dump(&chain));
    }

    #[test]
    fn bad_magic_and_short_files_unreadable() {
        assert!(matches!(
            dump_to_chain(b"nope"),
            Err(ChainLoadError::Unreadable(_))
        ));
        let mut dump = chain_to_dump(&sample_chain());
        dump[0] ^= 0xFF;
        assert!(matches!(
            dump_to_chain(&dump),
            Err(ChainLoadError::Unreadable(_))
        ));
    }

    #[test]
    fn index_file_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b0.chain");
        write_chain(&path, &sample_chain()).unwrap();
        let index = std::fs::read_to_string(dir.path().join("b0.chain.index.json")).unwrap();
        assert!(index.contains("\"payload_type\": \"model\""));
        assert!(index.contains("\"height\": 3"));
        let loaded = read_chain(&path).unwrap();
        assert_eq!(loaded.len(), 4);
    }
}
