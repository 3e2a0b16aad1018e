//! Utterance feature matrices and the `features.bin` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PFGF" | u32 version (1) | u32 dim | u32 dialogue_count
//! per dialogue: u16 id_len | id bytes | u32 rows | rows*dim f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Corpus, Role};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PFGF";
pub const FEATURE_VERSION: u32 = 1;

/// Dialogue id to `T × dim` matrix, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    entries: Vec<(String, Tensor<f32>)>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, m: Tensor<f32>) -> Result<()> {
        let id = id.into();
        if m.cols() != self.dim {
            return Err(Error::Features(format!(
                "dialogue {id:?} has dimension {}, store has {}",
                m.cols(),
                self.dim
            )));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Features(format!("dialogue id of {} bytes is too long", id.len())));
        }
        if let Some(&i) = self.index.get(&id) {
            self.entries[i].1 = m;
        } else {
            self.index.insert(id.clone(), self.entries.len());
            self.entries.push((id, m));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<f32>> {
        self.index.get(id).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Every dialogue has a matrix with one row per utterance.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for d in &corpus.dialogues {
            let m = self
                .get(&d.id)
                .ok_or_else(|| Error::Features(format!("no features for dialogue {:?}", d.id)))?;
            if m.rows() != d.len() {
                return Err(Error::Features(format!(
                    "dialogue {:?}: {} feature rows for {} utterances",
                    d.id,
                    m.rows(),
                    d.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, m) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FEATURE_MAGIC {
            return Err(Error::Features("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Features(format!(
                "version {version}, expected {FEATURE_VERSION}"
            )));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::Features("zero feature dimension".into()));
        }
        let count = r.u32()? as usize;
        let mut store = FeatureStore::new(dim);
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let id = String::from_utf8(r.take(id_len)?.to_vec())
                .map_err(|_| Error::Features("dialogue id is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let raw = r.take(rows * dim * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(id, Tensor::new(vec![rows, dim], data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Features(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureStore::from_bytes(&bytes)
    }

    /// Reads and validates against a corpus.
    pub fn load(path: &Path, corpus: &Corpus) -> Result<Self> {
        let s = FeatureStore::read(path)?;
        s.validate(corpus)?;
        Ok(s)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Features(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
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

/// Class-conditional Gaussian features: each `(role, label)` gets a mean
/// drawn once from `N(0, I)`, each utterance is that mean plus `N(0, σ²I)`
/// noise. `success_shift` adds `±shift·u` along a fixed random unit
/// direction `u` depending on the dialogue outcome.
#[derive(Clone, Debug)]
pub struct SynthFeatures {
    pub dim: usize,
    pub sigma: f64,
    pub success_shift: f64,
    pub seed: u64,
}

impl SynthFeatures {
    pub fn new(dim: usize, sigma: f64, seed: u64) -> Self {
        SynthFeatures {
            dim,
            sigma,
            success_shift: 0.0,
            seed,
        }
    }
}

pub fn synth_features(corpus: &Corpus, cfg: &SynthFeatures) -> Result<FeatureStore> {
    if cfg.dim == 0 {
        return Err(Error::Config("synthetic feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut means: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for role in Role::ALL {
        for _ in 0..corpus.vocabs.get(role).len() {
            means[role.index()].push((0..cfg.dim).map(|_| normal()).collect());
        }
    }
    let mut dir: Vec<f64> = (0..cfg.dim).map(|_| normal()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut store = FeatureStore::new(cfg.dim);
    for d in &corpus.dialogues {
        let sign = if d.success { 1.0 } else { -1.0 };
        let mut data = Vec::with_capacity(d.len() * cfg.dim);
        for u in &d.utterances {
            let mu = &means[u.role.index()][u.label_id];
            for k in 0..cfg.dim {
                let noise = if cfg.sigma > 0.0 { cfg.sigma * normal() } else { 0.0 };
                data.push((mu[k] + noise + sign * cfg.success_shift * dir[k]) as f32);
            }
        }
        store.insert(d.id.clone(), Tensor::new(vec![d.len(), cfg.dim], data)?)?;
    }
    Ok(store)
}
