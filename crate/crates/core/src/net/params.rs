//! Named parameter storage, graph binding and checkpoint archives.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::net::ModelConfig;
use crate::{Error, Result, Scalar, Tensor};

/// Ordered map of named parameter tensors. Iteration order is insertion
/// order, which fixes initialization, binding and update order and therefore
/// keeps training bit-reproducible.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        let prev = self.map.insert(name.to_string(), t);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_parameters(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Order-sensitive content checksum for weight-sharing audits.
    pub fn checksum(&self) -> f64 {
        let mut acc = 0.0f64;
        for (i, (_, t)) in self.map.iter().enumerate() {
            for &v in t.data() {
                acc = acc.mul_add(0.99999999, v.as_f64() + i as f64 * 1e-9);
            }
        }
        acc
    }

    /// Bind every parameter as a gradient leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> ParamBind {
        let mut vars = IndexMap::new();
        for (name, t) in &self.map {
            vars.insert(name.clone(), g.leaf(t.clone()));
        }
        ParamBind { vars }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<U>()))
                .collect(),
        }
    }
}

/// Graph handles for one bound parameter set.
pub struct ParamBind {
    vars: IndexMap<String, Var>,
}

impl ParamBind {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Kaiming-style init for a conv weight `[cout, cin, k, k]`.
pub fn init_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    zero_init: bool,
) {
    init_conv_biased(store, rng, name, cin, cout, k, zero_init, 0.0);
}

/// [`init_conv`] with an explicit initial bias; multiplicative gate layers
/// start at bias one so the modulation begins near identity and gradients
/// through the product stay spatially coherent.
#[allow(clippy::too_many_arguments)]
pub fn init_conv_biased<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    zero_init: bool,
    bias: f64,
) {
    let w = if zero_init {
        Tensor::zeros(&[cout, cin, k, k])
    } else {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Tensor::rand_normal(&[cout, cin, k, k], std, rng)
    };
    store.insert(&format!("{name}.w"), w);
    store.insert(&format!("{name}.b"), Tensor::full(&[cout], T::of(bias)));
}

// ---------------------------------------------------------------------------
// Checkpoint archive
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"BIMVFI\0\x01";
const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer moments carried through a checkpoint.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub step: usize,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T> Default for OptimState<T> {
    fn default() -> Self {
        Self {
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }
}

/// Self-describing weight archive: versioned header, model config, named
/// parameter grids, and optional optimizer state for exact training resume.
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub optim: Option<OptimState<T>>,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    step: usize,
    entries: Vec<EntryMeta>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let push = |entries: &mut Vec<EntryMeta>, payload: &mut Vec<u8>, kind: &str, name: &str, t: &Tensor<T>| {
            entries.push(EntryMeta {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                kind: kind.to_string(),
            });
            for &v in t.data() {
                payload.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        };
        for (name, t) in self.params.iter() {
            push(&mut entries, &mut payload, "param", name, t);
        }
        if let Some(optim) = &self.optim {
            for (name, t) in &optim.m {
                push(&mut entries, &mut payload, "adam_m", name, t);
            }
            for (name, t) in &optim.v {
                push(&mut entries, &mut payload, "adam_v", name, t);
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            step: self.step,
            entries,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

        let mut f = std::fs::File::create(path)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())?;
        f.write_all(&header_json)?;
        f.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:02x?}, not a checkpoint file"
            )));
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        f.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let mut payload = Vec::new();
        f.read_to_end(&mut payload)?;
        let expected: usize = header
            .entries
            .iter()
            .map(|e| e.shape.iter().product::<usize>() * 8)
            .sum();
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }

        let mut params = ParamStore::new();
        let mut optim = OptimState::<T> {
            step: header.step,
            m: IndexMap::new(),
            v: IndexMap::new(),
        };
        let mut has_optim = false;
        let mut offset = 0usize;
        for entry in &header.entries {
            let numel: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for i in 0..numel {
                let mut b = [0u8; 8];
                b.copy_from_slice(&payload[offset + i * 8..offset + i * 8 + 8]);
                data.push(T::of(f64::from_le_bytes(b)));
            }
            offset += numel * 8;
            let t = Tensor::new(&entry.shape, data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
            match entry.kind.as_str() {
                "param" => params.insert(&entry.name, t),
                "adam_m" => {
                    has_optim = true;
                    optim.m.insert(entry.name.clone(), t);
                }
                "adam_v" => {
                    has_optim = true;
                    optim.v.insert(entry.name.clone(), t);
                }
                other => {
                    return Err(Error::Checkpoint(format!("unknown entry kind {other}")));
                }
            }
        }
        Ok(Self {
            config: header.config,
            params,
            optim: has_optim.then_some(optim),
            step: header.step,
        })
    }
}
