//! Model snapshot container.
//!
//! ```text
//! "PFGM" | u32 version (1) | u32 config_len | config JSON | u32 records
//! per record: u16 name_len | name | u32 rank | rank*u32 dims | f32 payload
//! ```
//!
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig};
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PFGM";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn snapshot_to_bytes(cfg: &ModelConfig, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(cfg)?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Snapshot(format!("parameter name {} too long", p.name)));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes the container and rebuilds the model layout from the embedded
/// configuration. Every parameter the layout expects must be present with
/// the right shape, and nothing else.
pub fn snapshot_from_bytes(bytes: &[u8]) -> Result<(Model, ParamStore<f32>)> {
    let mut c = Cursor { b: bytes, pos: 0 };
    if c.take(4)? != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("version {version}, expected {SNAPSHOT_VERSION}")));
    }
    let len = c.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(c.take(len)?)
        .map_err(|e| Error::Snapshot(format!("config: {e}")))?;
    let count = c.u32()? as usize;
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u16()? as usize;
        let name = String::from_utf8(c.take(n)?.to_vec())
            .map_err(|_| Error::Snapshot("parameter name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(4).ok_or_else(|| Error::Snapshot("shape overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|q| f32::from_le_bytes([q[0], q[1], q[2], q[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Snapshot(format!("{name}: {e}")))?;
        loaded.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::Snapshot(format!("{} trailing bytes", bytes.len() - c.pos)));
    }

    let mut store = ParamStore::<f32>::new();
    let model = Model::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    if store.len() != loaded.len() {
        return Err(Error::Snapshot(format!(
            "{} parameters in file, model layout has {}",
            loaded.len(),
            store.len()
        )));
    }
    for (name, t) in loaded {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Snapshot(format!("unexpected parameter {name}")))?;
        if store.value(id).shape() != t.shape() {
            return Err(Error::Snapshot(format!(
                "{name}: shape {:?}, layout expects {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok((model, store))
}

pub fn write_snapshot(path: &Path, cfg: &ModelConfig, store: &ParamStore<f32>) -> Result<()> {
    fs::write(path, snapshot_to_bytes(cfg, store)?).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<(Model, ParamStore<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    snapshot_from_bytes(&bytes)
}
