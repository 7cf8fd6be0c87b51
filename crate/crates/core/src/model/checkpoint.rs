//! Checkpoint file: `YAWCKPT1`, u32 LE header length, JSON header, then
//! every parameter array as f64 LE in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, ModelParams, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"YAWCKPT1";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub model: EncoderConfig,
    pub epoch: usize,
    pub seed: u64,
    /// Training config, loss curve and anything else the writer records.
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(network: &Network, epoch: usize, seed: u64, meta: serde_json::Value) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                schema_version: CHECKPOINT_SCHEMA_VERSION,
                model: network.config().clone(),
                epoch,
                seed,
                meta,
            },
            params: network.params().clone(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_params(self.header.model.clone(), self.params.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params.arrays {
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let end = 12usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[12..end]).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema version {}",
                header.schema_version
            )));
        }
        let mut params = header.model.init_params(0)?;
        let payload = &bytes[end..];
        if payload.len() != 8 * params.param_count() {
            return Err(Error::Format(format!(
                "checkpoint payload has {} bytes, model needs {}",
                payload.len(),
                8 * params.param_count()
            )));
        }
        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.load_flat(&flat)?;
        Ok(Checkpoint { header, params })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.encode()?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let net = Network::new(EncoderConfig::default(), 4).unwrap();
        let ckpt = Checkpoint::new(&net, 3, 4, serde_json::json!({"note": "x"}));
        let bytes = ckpt.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.network().unwrap().params(), net.params());
    }

    #[test]
    fn truncated_payload() {
        let net = Network::new(EncoderConfig::default(), 4).unwrap();
        let bytes = Checkpoint::new(&net, 0, 4, serde_json::Value::Null).encode().unwrap();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 8]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::decode(b"YAWVOL01...."), Err(Error::Format(_))));
    }
}
