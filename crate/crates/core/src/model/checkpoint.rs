//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! b"MGRNCKPT"            8-byte magic
//! u32                    header length in bytes
//! header                 JSON {format_version, model_config, graph_names, seed}
//! u64                    parameter count
//! f64 * count            parameters in MgrnParams::tensors() order
//! ```
//!
//! Tensor order: each graph's GCN weights layer by layer, attention
//! projection, attention query, then per LSTM layer W, U, b, then the head
//! weights and bias. Every matrix is row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MgrnParams, Mgrn, ModelConfig, ModelError, Result};
use crate::numerics::Rng;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MGRNCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub graph_names: Vec<String>,
    pub seed: u64,
}

pub fn encode_checkpoint(model: &Mgrn, seed: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model_config: model.config().clone(),
        graph_names: model.graph_names().to_vec(),
        seed,
    };
    let json = serde_json::to_vec(&header)?;
    let flat = model.params().to_flat();
    let mut out = Vec::with_capacity(8 + 4 + json.len() + 8 + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    let len = u32::try_from(json.len()).map_err(|_| ModelError::Checkpoint("header too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Mgrn, CheckpointHeader)> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("missing magic"))?;
    let (len, rest) = rest.split_first_chunk::<4>().ok_or_else(|| bad("truncated header length"))?;
    let len = u32::from_le_bytes(*len) as usize;
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let (json, rest) = rest.split_at(len);
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    let (count, rest) = rest.split_first_chunk::<8>().ok_or_else(|| bad("truncated parameter count"))?;
    let count = u64::from_le_bytes(*count) as usize;
    if rest.len() != count.saturating_mul(8) {
        return Err(bad("parameter block length does not match count"));
    }
    header.model_config.validate()?;
    let mut params = MgrnParams::init(&header.model_config, header.graph_names.len(), &mut Rng::new(0));
    if params.num_params() != count {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters for this config, found {count}",
            params.num_params()
        )));
    }
    let flat: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    params.set_flat(&flat);
    let model = Mgrn::from_params(header.model_config.clone(), header.graph_names.clone(), params)?;
    Ok((model, header))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn save_checkpoint(path: &Path, model: &Mgrn, seed: u64) -> Result<()> {
    let bytes = encode_checkpoint(model, seed)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Mgrn, CheckpointHeader)> {
    decode_checkpoint(&fs::read(path)?)
}
