//! Named parameter storage, initialization, Adam, and checkpoint I/O.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Uniform in `±1/sqrt(fan_in)`.
    ScaledUniform { fan_in: usize },
}

#[derive(Debug, Clone)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Parameters in registration order, addressable by name or [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn make_param<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(Error::Config(format!("parameter `{name}` has invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Constant(c) => vec![c; n],
            Init::Uniform { lo, hi } => (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
            Init::ScaledUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        Ok(self.insert(name, shape.to_vec(), data))
    }

    fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        let n = data.len();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for p in &mut self.params {
                p.grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    /// One bias-corrected Adam update on every parameter, then zeroes grads.
    pub fn adam_step(&mut self, cfg: AdamConfig) {
        for p in &mut self.params {
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for j in 0..p.data.len() {
                let g = p.grad[j];
                p.adam_m[j] = cfg.beta1 * p.adam_m[j] + (1.0 - cfg.beta1) * g;
                p.adam_v[j] = cfg.beta2 * p.adam_v[j] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.adam_m[j] / c1;
                let v_hat = p.adam_v[j] / c2;
                p.data[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                p.grad[j] = 0.0;
            }
        }
    }

    /// Copies values from `other` for every parameter name present in both
    /// stores. Shapes must agree; names missing from `other` are an error.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if src.shape != p.shape {
                return Err(Error::shape("load_values", &p.shape, &src.shape));
            }
            p.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<ParamEntry> = self
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect();
        serde_json::to_value(entries).expect("parameter entries serialize")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let entries: Vec<ParamEntry> = serde_json::from_value(value)?;
        let mut store = ParamStore::new();
        for e in entries {
            if store.index.contains_key(&e.name) {
                return Err(Error::Data(format!("duplicate parameter `{}`", e.name)));
            }
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::shape("from_json", &e.shape, &[e.data.len()]));
            }
            store.insert(&e.name, e.shape, e.data);
        }
        Ok(store)
    }

    /// Little-endian binary layout:
    /// magic `CRFNPS01`, u32 count, then per parameter
    /// u32 name length, UTF-8 name, u32 rank, u64 dims, f64 data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for d in &p.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Data("bad parameter file magic".into()));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Data(e.to_string()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            if store.index.contains_key(&name) {
                return Err(Error::Data(format!("duplicate parameter `{name}`")));
            }
            store.insert(&name, shape, data);
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after parameters".into()));
        }
        Ok(store)
    }
}

const MAGIC: &[u8; 8] = b"CRFNPS01";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("truncated parameter file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
