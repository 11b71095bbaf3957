//! Binary checkpoint: `b"CIRK"`, `u32` format version, `u64` length and
//! UTF-8 TOML model configuration, `u64` array count, then each stored
//! tensor in declaration order as a `u64` element count followed by that
//! many `f64` values. All integers and floats are little-endian.

use std::path::Path;

use super::config::ModelConfig;
use super::net::CirNet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CIRK";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &CirNet) -> Result<Vec<u8>> {
    let cfg = toml::to_string(&net.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let entries = net.store.entries();
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.tensor.numel() as u64).to_le_bytes());
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<CirNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let config: ModelConfig = toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut net = CirNet::new(config, 0)?;
    let count = r.u64()? as usize;
    if count != net.store.len() {
        return Err(Error::Checkpoint(format!(
            "{count} arrays stored, configuration needs {}",
            net.store.len()
        )));
    }
    let ids: Vec<_> = net.store.ids().collect();
    for id in ids {
        let n = r.u64()? as usize;
        let t = net.store.get_mut(id);
        if n != t.numel() {
            return Err(Error::Checkpoint(format!(
                "array {} has {n} values, expected {}",
                id.index(),
                t.numel()
            )));
        }
        for (dst, chunk) in t.data_mut().iter_mut().zip(r.take(8 * n)?.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(net)
}

pub fn save(net: &CirNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<CirNet> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Rng, Tensor};

    #[test]
    fn round_trip_is_bit_identical() {
        let mut net = CirNet::new(ModelConfig::tiny(), 7).unwrap();
        let head = net.head_rgbd.weight;
        let w = net.store.get(head).shape();
        net.store
            .set(head, Tensor::rand_uniform(w, -1.0, 1.0, &mut Rng::new(1)))
            .unwrap();
        let bytes = to_bytes(&net).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.store, net.store);
        assert_eq!(back.config, net.config);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        let mut rng = Rng::new(2);
        let rgb = Tensor::rand_uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let depth = Tensor::rand_uniform([1, 1, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(net.predict(&rgb, &depth).unwrap(), back.predict(&rgb, &depth).unwrap());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let net = CirNet::new(ModelConfig::tiny(), 7).unwrap();
        let bytes = to_bytes(&net).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
