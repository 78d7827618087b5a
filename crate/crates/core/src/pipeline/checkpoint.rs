//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `ISPCKPT\0` · u32 version · u64 manifest length · manifest (`key=value` lines) ·
//! u32 block count · blocks (u16 name length, name, u8 rank, u64 dims, f64 data) ·
//! SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::IspConfig;
use super::model::PipelineModel;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ISPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(m: &PipelineModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let mut manifest = String::new();
    manifest.push_str(&format!("format_version={CHECKPOINT_VERSION}\n"));
    manifest.push_str(&format!("seed={}\n", m.seed));
    manifest.push_str(&format!("step={}\n", m.step));
    manifest.push_str(&format!("gamma={:?}\n", m.gamma));
    for (k, v) in m.config.to_kv() {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    let params = m.to_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in &params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and validates a checkpoint; never returns a partially loaded model.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<PipelineModel> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic or too short)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint digest mismatch (truncated or corrupt)".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let mlen = r.u64()? as usize;
    let manifest = std::str::from_utf8(r.take(mlen)?).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let mut kv = BTreeMap::new();
    for line in manifest.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let config = IspConfig::from_kv(&kv)?;
    let parse_u64 = |k: &str| -> Result<u64> {
        kv.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format(format!("manifest key {k}")))
    };
    let seed = parse_u64("seed")?;
    let step = parse_u64("step")?;
    let nblocks = r.u32()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..nblocks {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| Error::Format("block name is not UTF-8".into()))?.to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("block size overflow".into()))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("block size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor { shape, data });
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after parameter blocks".into()));
    }
    let mut model = PipelineModel::init(config, seed)?;
    model.set_params(&params)?;
    model.step = step;
    Ok(model)
}

pub fn save_checkpoint(m: &PipelineModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(m))
}

pub fn load_checkpoint(path: &Path) -> Result<PipelineModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PipelineModel {
        let mut m = PipelineModel::init(IspConfig::default(), 17).unwrap();
        m.perturb(3, 0.3);
        m.step = 42;
        m
    }

    #[test]
    fn byte_stable_round_trip() {
        let m = model();
        let a = encode_checkpoint(&m);
        let back = decode_checkpoint(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), a);
    }

    #[test]
    fn rejects_magic_version_and_truncation() {
        let a = encode_checkpoint(&model());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut v = a.clone();
        v[8] = 9;
        assert!(matches!(decode_checkpoint(&v), Err(Error::Version { found: 9, .. })));
        for cut in [0, 7, 12, 40, a.len() / 2, a.len() - 1] {
            assert!(decode_checkpoint(&a[..cut]).is_err());
        }
    }
}
