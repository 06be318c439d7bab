//! Weight file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LFFD"  u32 version  u64 config hash
//! per layer, in backbone then head order:
//!     u32 name length, name bytes (UTF-8)
//!     u32 rank, rank × u32 weight dims
//!     weights as f32, then bias as f32 (length = first dim)
//! ```

use std::fs;
use std::path::Path;

use lffd_core::net::{ModelWeights, NetworkConfig, FORMAT_VERSION};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LFFD";

pub fn encode_model(config: &NetworkConfig, weights: &ModelWeights<f32>) -> Result<Vec<u8>> {
    weights.check_against(config)?;
    let mut out = Vec::with_capacity(16 + weights.param_count() * 4 + config.layers.len() * 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&config.hash().to_le_bytes());
    for (spec, conv) in config.all_layers().iter().zip(weights.convs()) {
        let name = spec.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = conv.weights.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in conv.weights.data().iter().chain(&conv.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Model(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8], config: &NetworkConfig) -> Result<ModelWeights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Model("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "version {version} not supported (expected {FORMAT_VERSION})"
        )));
    }
    let hash = u64::from_le_bytes(r.take(8, "config hash")?.try_into().unwrap());
    if hash != config.hash() {
        return Err(Error::Model(format!(
            "config hash {hash:016x} does not match network '{}' ({:016x})",
            config.name,
            config.hash()
        )));
    }
    let mut weights = ModelWeights::zeros(config);
    for (spec, conv) in config.all_layers().iter().zip(weights.convs_mut()) {
        let len = r.u32("layer name length")? as usize;
        let name = r.take(len, "layer name")?;
        if name != spec.name.as_bytes() {
            return Err(Error::Model(format!(
                "expected layer '{}', found '{}'",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("shape")? as usize);
        }
        if shape != conv.weights.shape() {
            return Err(Error::Model(format!(
                "layer '{}' has shape {shape:?}, network expects {:?}",
                spec.name,
                conv.weights.shape()
            )));
        }
        let floats = |r: &mut Reader<'_>, dst: &mut [f32]| -> Result<()> {
            let raw = r.take(dst.len() * 4, "weights")?;
            for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                *d = f32::from_le_bytes(c.try_into().unwrap());
            }
            Ok(())
        };
        floats(&mut r, conv.weights.data_mut())?;
        floats(&mut r, &mut conv.bias)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Model(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(weights)
}

pub fn save_model(path: &Path, config: &NetworkConfig, weights: &ModelWeights<f32>) -> Result<()> {
    let bytes = encode_model(config, weights)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path, config: &NetworkConfig) -> Result<ModelWeights<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lffd_core::optim::xavier_init;

    #[test]
    fn round_trip_is_exact() {
        let cfg = NetworkConfig::desk(4);
        let w = xavier_init(&cfg, 1);
        let bytes = encode_model(&cfg, &w).unwrap();
        assert_eq!(decode_model(&bytes, &cfg).unwrap(), w);
        assert_eq!(encode_model(&cfg, &decode_model(&bytes, &cfg).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_rejected() {
        let cfg = NetworkConfig::desk(4);
        let bytes = encode_model(&cfg, &xavier_init(&cfg, 1)).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_model(&bad_magic, &cfg).is_err());
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(decode_model(&bad_version, &cfg).is_err());
        assert!(decode_model(&bytes[..bytes.len() - 1], &cfg).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_model(&longer, &cfg).is_err());
        assert!(decode_model(&bytes, &NetworkConfig::desk(8)).is_err());
    }
}
