//! Versioned binary checkpoint.
//!
//! Layout: 8-byte magic `DRIQNCKP`, `u32` format version, `u64` header
//! length, a UTF-8 JSON header (network dims, layer slice offsets, block
//! table, metadata), then every block as little-endian `f64`s in header
//! order. The first block is always the online parameter vector `params`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{LayerSlice, Network, NetworkSpec, ParamLayout};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DRIQNCKP";
const PARAMS_BLOCK: &str = "params";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint document: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint network {found} does not match the configured network {expected}")]
    Network { found: String, expected: String },
    #[error("checkpoint was written for config {found}, current config hashes to {expected}")]
    ConfigHash { found: String, expected: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub step: u64,
    pub config_hash: String,
    /// Serialized RNG streams keyed by role.
    #[serde(default)]
    pub rng_states: BTreeMap<String, serde_json::Value>,
    /// Free-form run information (resolved config, agent kind, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    network: NetworkSpec,
    layers: Vec<LayerSlice>,
    param_count: usize,
    head_offset: usize,
    head_len: usize,
    blocks: Vec<BlockHeader>,
    metadata: CheckpointMetadata,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    /// Additional named vectors (target network, optimizer moments, ...).
    pub blocks: BTreeMap<String, Vec<f64>>,
    pub metadata: CheckpointMetadata,
}

pub fn save_checkpoint(net: &Network, extra: &[(&str, &[f64])], metadata: &CheckpointMetadata) -> Vec<u8> {
    let mut blocks = vec![BlockHeader {
        name: PARAMS_BLOCK.into(),
        len: net.params.len(),
    }];
    blocks.extend(extra.iter().map(|(name, data)| BlockHeader {
        name: (*name).into(),
        len: data.len(),
    }));
    let head = net.head_range();
    let header = Header {
        format: "driqn-checkpoint".into(),
        network: net.spec,
        layers: net.layout.layers.clone(),
        param_count: net.layout.len,
        head_offset: head.start,
        head_len: head.len(),
        blocks,
        metadata: metadata.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let total: usize = net.params.len() + extra.iter().map(|(_, d)| d.len()).sum::<usize>();
    let mut doc = Vec::with_capacity(20 + header.len() + 8 * total);
    doc.extend_from_slice(MAGIC);
    doc.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    doc.extend_from_slice(&(header.len() as u64).to_le_bytes());
    doc.extend_from_slice(&header);
    for v in net.params.iter().chain(extra.iter().flat_map(|(_, d)| d.iter())) {
        doc.extend_from_slice(&v.to_le_bytes());
    }
    doc
}

fn take<'a>(doc: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= doc.len())
        .ok_or_else(|| CheckpointError::Format("truncated document".into()))?;
    let out = &doc[*pos..end];
    *pos = end;
    Ok(out)
}

fn describe(spec: &NetworkSpec) -> String {
    format!(
        "{:?} obs_dim={} hidden={} n_cos={} actions={}",
        spec.kind, spec.obs_dim, spec.hidden, spec.n_cos, spec.n_actions
    )
}

/// Parses a checkpoint, refusing it when it does not fit `expected_network`
/// or was produced under a different `expected_config_hash`.
pub fn load_checkpoint(
    doc: &[u8],
    expected_network: Option<&NetworkSpec>,
    expected_config_hash: Option<&str>,
) -> Result<Checkpoint, CheckpointError> {
    let mut pos = 0;
    if take(doc, &mut pos, 8)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(doc, &mut pos, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(take(doc, &mut pos, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(doc, &mut pos, header_len)?)
        .map_err(|e| CheckpointError::Format(format!("header: {e}")))?;

    let layout = ParamLayout::new(&header.network);
    if layout.layers != header.layers || layout.len != header.param_count || layout.head().start != header.head_offset
    {
        return Err(CheckpointError::Format("layer table inconsistent with network dims".into()));
    }
    if let Some(expected) = expected_network {
        if *expected != header.network {
            return Err(CheckpointError::Network {
                found: describe(&header.network),
                expected: describe(expected),
            });
        }
    }
    if let Some(expected) = expected_config_hash {
        if expected != header.metadata.config_hash {
            return Err(CheckpointError::ConfigHash {
                found: header.metadata.config_hash.clone(),
                expected: expected.to_string(),
            });
        }
    }

    let mut blocks = BTreeMap::new();
    for block in &header.blocks {
        let bytes = take(doc, &mut pos, block.len.saturating_mul(8))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.insert(block.name.clone(), values);
    }
    if pos != doc.len() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    let params = blocks
        .remove(PARAMS_BLOCK)
        .ok_or_else(|| CheckpointError::Format("missing params block".into()))?;
    let network = Network::from_params(header.network, params).map_err(|e| CheckpointError::Format(e.to_string()))?;
    Ok(Checkpoint {
        network,
        blocks,
        metadata: header.metadata,
    })
}
