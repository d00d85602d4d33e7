//! Binary checkpoint container.
//!
//! All integers little-endian, floats stored as their IEEE-754 bit patterns
//! so a load reproduces the saved parameters bit for bit.
//!
//! ```text
//! magic            8 bytes   "TDCKPT\0\0"
//! format_version   u32       1
//! config_len       u32
//! config           config_len bytes, UTF-8 JSON of the ModelConfig
//! seed             u64       initialisation seed
//! array_count      u32
//! array_count × {
//!     layer_index  u32
//!     role         u8        0 = weights, 1 = bias
//!     rank         u32
//!     dims         rank × u64
//!     values       product(dims) × f64
//! }
//! ```

use std::path::Path;

use super::model::{LayerParams, ModelConfig, ModelParameters};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TDCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(config: &ModelConfig, params: &ModelParameters) -> Result<Vec<u8>> {
    params.check_against(config)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(config)?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&params.seed.to_le_bytes());
    let arrays: Vec<(usize, u8, &Tensor)> = params
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
        .flat_map(|(i, p)| [(i, 0u8, &p.weights), (i, 1u8, &p.bias)])
        .collect();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (layer, role, t) in arrays {
        out.extend_from_slice(&(layer as u32).to_le_bytes());
        out.push(role);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<(ModelConfig, ModelParameters), String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|e| format!("config: {e}"))?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut layers: Vec<Option<LayerParams>> = vec![None; config.layers.len()];
    let mut pending: Vec<Option<Tensor>> = vec![None; config.layers.len()];
    for _ in 0..count {
        let layer = r.u32()? as usize;
        let role = r.u8()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(format!("implausible rank {rank}"));
        }
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or("dimension overflow")?;
        let raw = r.take(n.checked_mul(8).ok_or("size overflow")?)?;
        let values =
            raw.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        let t = Tensor::new(dims, values).map_err(|e| e.to_string())?;
        if layer >= layers.len() {
            return Err(format!("array for layer {layer} but config has {}", layers.len()));
        }
        match role {
            0 => pending[layer] = Some(t),
            1 => {
                let weights = pending[layer].take().ok_or(format!("bias before weights for layer {layer}"))?;
                layers[layer] = Some(LayerParams { weights, bias: t });
            }
            other => return Err(format!("unknown array role {other}")),
        }
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    let params = ModelParameters { seed, layers };
    params.check_against(&config).map_err(|e| e.to_string())?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParameters) -> Result<()> {
    let bytes = encode_checkpoint(config, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParameters)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::init_parameters;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::basic_cnn(1, 16, 16, 5);
        let params = init_parameters(&cfg, 11).unwrap();
        let bytes = encode_checkpoint(&cfg, &params).unwrap();
        let (cfg2, params2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params.seed, params2.seed);
        let a: Vec<u64> = params.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = params2.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(encode_checkpoint(&cfg2, &params2).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let cfg = ModelConfig::basic_cnn(1, 8, 8, 2);
        let params = init_parameters(&cfg, 1).unwrap();
        let bytes = encode_checkpoint(&cfg, &params).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
