//! Policy construction from configuration and binary checkpoints.
//!
//! A checkpoint is the magic `NEGOPOL\0`, a little-endian `u32` version, a
//! `u64` header length, a JSON header and then every parameter as a
//! little-endian `f64` in layout order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::flat::{FlatConfig, FlatPolicy};
use crate::gnn::{GatConfig, GnnPolicy};
use crate::model::{ActorCritic, PolicyKind};
use crate::params::Section;

pub const MAGIC: &[u8; 8] = b"NEGOPOL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which network to train and its shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub policy: PolicyKind,
    pub gnn: GatConfig,
    pub flat: FlatConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Gnn,
            gnn: GatConfig::default(),
            flat: FlatConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        match self.policy {
            PolicyKind::Gnn => self.gnn.validate(),
            PolicyKind::Flat => self.flat.validate(),
        }
    }

    /// Builds a freshly initialized network. The flat policy needs the
    /// objective sizes of the one domain it will ever see.
    pub fn build(&self, sizes: Option<&[usize]>, seed: u64) -> Result<Box<dyn ActorCritic>> {
        Ok(match self.policy {
            PolicyKind::Gnn => Box::new(GnnPolicy::new(self.gnn, seed)?),
            PolicyKind::Flat => {
                let sizes = sizes.ok_or_else(|| {
                    PolicyError::InvalidInput(
                        "the flat policy requires a fixed problem to size its input".into(),
                    )
                })?;
                Box::new(FlatPolicy::new(self.flat.clone(), sizes.to_vec(), seed)?)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: PolicyKind,
    architecture: serde_json::Value,
    sections: Vec<Section>,
    num_params: usize,
    metadata: serde_json::Value,
}

/// A loaded policy together with the metadata stored next to it.
pub struct Checkpoint {
    pub policy: Box<dyn ActorCritic>,
    pub metadata: serde_json::Value,
}

impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("kind", &self.policy.kind())
            .field("num_params", &self.policy.num_params())
            .field("metadata", &self.metadata)
            .finish()
    }
}

pub fn encode(policy: &dyn ActorCritic, metadata: serde_json::Value) -> Vec<u8> {
    let header = Header {
        kind: policy.kind(),
        architecture: policy.architecture(),
        sections: policy.layout().sections().to_vec(),
        num_params: policy.num_params(),
        metadata,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + 8 * policy.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in policy.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> PolicyError {
    PolicyError::Checkpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a policy checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(20))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])
        .map_err(|e| bad(format!("malformed header: {e}")))?;
    let body = &bytes[header_end..];
    if body.len() != 8 * header.num_params {
        return Err(bad(format!(
            "expected {} parameters, found {} bytes",
            header.num_params,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let policy: Box<dyn ActorCritic> = match header.kind {
        PolicyKind::Gnn => {
            let config: GatConfig = serde_json::from_value(header.architecture.clone())
                .map_err(|e| bad(format!("bad graph architecture: {e}")))?;
            Box::new(GnnPolicy::from_params(config, params).map_err(|e| bad(e.to_string()))?)
        }
        PolicyKind::Flat => Box::new(
            FlatPolicy::from_architecture(&header.architecture, params)
                .map_err(|e| bad(e.to_string()))?,
        ),
    };
    if policy.layout().sections() != header.sections.as_slice() {
        return Err(bad("parameter sections do not match the architecture"));
    }
    Ok(Checkpoint {
        policy,
        metadata: header.metadata,
    })
}

pub fn save(policy: &dyn ActorCritic, metadata: serde_json::Value, path: &Path) -> Result<()> {
    let bytes = encode(policy, metadata);
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)
        .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let configs = [
            PolicyConfig {
                gnn: GatConfig { layers: 2, hidden: 8, heads: 2 },
                ..Default::default()
            },
            PolicyConfig {
                policy: PolicyKind::Flat,
                flat: FlatConfig { hidden: 6, layers: 2 },
                ..Default::default()
            },
        ];
        for (i, config) in configs.iter().enumerate() {
            let policy = config.build(Some(&[3, 4]), 9).unwrap();
            let path = dir.path().join(format!("p{i}.bin"));
            save(policy.as_ref(), json!({"step": 12, "seed": 9}), &path).unwrap();
            let loaded = load(&path).unwrap();
            assert_eq!(loaded.policy.kind(), config.policy);
            assert_eq!(loaded.policy.params(), policy.params());
            assert_eq!(loaded.metadata["step"], 12);
        }
    }

    #[test]
    fn rejects_corruption() {
        let config = PolicyConfig {
            gnn: GatConfig { layers: 1, hidden: 4, heads: 1 },
            ..Default::default()
        };
        let policy = config.build(None, 0).unwrap();
        let bytes = encode(policy.as_ref(), json!(null));
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode(&wrong_magic).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 7;
        assert!(decode(&wrong_version).is_err());
        assert!(decode(&bytes).is_ok());
    }

    #[test]
    fn flat_needs_sizes() {
        let config = PolicyConfig {
            policy: PolicyKind::Flat,
            ..Default::default()
        };
        assert!(config.build(None, 0).is_err());
    }
}
