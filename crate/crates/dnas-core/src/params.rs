//! Named parameter storage shared by discrete networks and supernets, the
//! Adam optimizer with separate weight/architecture learning rates, and a
//! flat named-tensor binary container with a JSON manifest.

use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor};

/// Which optimizer group a parameter belongs to. Buffers (running statistics)
/// are never updated by gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Weight,
    Arch,
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry {
    pub name: String,
    pub data: Vec<Real>,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

/// Flat store of all named tensors of a network. Construction order is the
/// canonical order used for serialization and optimizer state.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        data: Vec<Real>,
        shape: Vec<usize>,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let name = name.into();
        if crate::tensor::numel(&shape) != data.len() {
            return Err(Error::shape(
                "param",
                format!("{name}: shape {shape:?} does not hold {} elements", data.len()),
            ));
        }
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArg(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            data,
            shape,
            group,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[Real] {
        &self.entries[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<Real> {
        &mut self.entries[id.0].data
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Number of scalar parameters, buffers excluded.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group != ParamGroup::Buffer)
            .map(|e| e.data.len())
            .sum()
    }

    /// Copies every entry whose name matches `src_name(dst_name)` from
    /// another store. Returns the number of entries copied.
    pub fn copy_from(
        &mut self,
        src: &ParamStore,
        mut src_name: impl FnMut(&str) -> Option<String>,
    ) -> Result<usize> {
        let mut copied = 0;
        for i in 0..self.entries.len() {
            let dst_name = self.entries[i].name.clone();
            if let Some(sname) = src_name(&dst_name) {
                let sid = src.id_by_name(&sname).ok_or_else(|| {
                    Error::InvalidArg(format!("source parameter {sname} not found"))
                })?;
                let se = src.entry(sid);
                if se.shape != self.entries[i].shape {
                    return Err(Error::shape(
                        "copy_from",
                        format!("{dst_name}: {:?} vs {:?}", self.entries[i].shape, se.shape),
                    ));
                }
                self.entries[i].data = se.data.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Per-step forward context: owns the tape for the step and lazily binds
/// parameters onto it, memoized so a parameter used twice maps to a single
/// tape node (gradient contributions then accumulate correctly).
pub struct Fwd<'a> {
    pub tape: &'a Tape,
    pub training: bool,
    bound: HashMap<ParamId, Tensor>,
    /// Running-statistic updates produced during a training forward pass,
    /// applied to the store after the step.
    pub stat_updates: Vec<(ParamId, Vec<Real>)>,
}

impl<'a> Fwd<'a> {
    pub fn new(tape: &'a Tape, training: bool) -> Self {
        Fwd {
            tape,
            training,
            bound: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Tensor> {
        if let Some(t) = self.bound.get(&id) {
            return Ok(*t);
        }
        let e = store.entry(id);
        let t = self.tape.leaf(e.data.clone(), e.shape.clone())?;
        self.bound.insert(id, t);
        Ok(t)
    }

    /// Gradients of every parameter bound during this step, keyed by id.
    pub fn grads(&self) -> Vec<(ParamId, Vec<Real>)> {
        let mut out: Vec<(ParamId, Vec<Real>)> = self
            .bound
            .iter()
            .map(|(id, t)| (*id, self.tape.grad(*t)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Applies queued running-statistic updates to the store.
    pub fn apply_stat_updates(self, store: &mut ParamStore) {
        for (id, data) in self.stat_updates {
            *store.data_mut(id) = data;
        }
    }
}

/// Adam with decoupled learning rates for network weights and architecture
/// parameters.
pub struct Adam {
    pub lr_weights: Real,
    pub lr_arch: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    t: u64,
    m: HashMap<ParamId, Vec<Real>>,
    v: HashMap<ParamId, Vec<Real>>,
}

impl Adam {
    pub fn new(lr_weights: Real, lr_arch: Real) -> Self {
        Adam {
            lr_weights,
            lr_arch,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<Real>)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads {
            let group = store.entry(*id).group;
            let lr = match group {
                ParamGroup::Weight => self.lr_weights,
                ParamGroup::Arch => self.lr_arch,
                ParamGroup::Buffer => continue,
            };
            let m = self.m.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            let data = store.data_mut(*id);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Fan-in scaled uniform init for conv kernels.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<Real> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound) as Real).collect()
}

// ---- binary container ----

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
    group: ParamGroup,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

const MAGIC: &[u8; 8] = b"DNASPAR1";

fn dtype_name() -> &'static str {
    if std::mem::size_of::<Real>() == 8 {
        "f64"
    } else {
        "f32"
    }
}

impl ParamStore {
    /// Writes all tensors to a single file: magic, little-endian u64 manifest
    /// length, JSON manifest, raw little-endian payload. Round-trips
    /// bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |e| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut manifest = Manifest {
            tensors: Vec::with_capacity(self.entries.len()),
        };
        let elem = std::mem::size_of::<Real>() as u64;
        let mut offset = 0u64;
        for e in &self.entries {
            manifest.tensors.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: dtype_name().to_string(),
                byte_offset: offset,
                group: e.group,
            });
            offset += e.data.len() as u64 * elem;
        }
        let json = serde_json::to_vec(&manifest)
            .map_err(|e| Error::Malformed {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        let mut f = std::fs::File::create(path).map_err(io_err)?;
        f.write_all(MAGIC).map_err(io_err)?;
        f.write_all(&(json.len() as u64).to_le_bytes()).map_err(io_err)?;
        f.write_all(&json).map_err(io_err)?;
        for e in &self.entries {
            for v in &e.data {
                f.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    /// Loads tensor data by name into an existing store with matching
    /// structure.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let io_err = |e| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        let bad = |detail: String| Error::Malformed {
            path: path.display().to_string(),
            detail,
        };
        let mut f = std::fs::File::open(path).map_err(io_err)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len).map_err(io_err)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        f.read_exact(&mut json).map_err(io_err)?;
        let manifest: Manifest =
            serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
        let mut payload = Vec::new();
        f.read_to_end(&mut payload).map_err(io_err)?;
        let elem = std::mem::size_of::<Real>();
        for me in &manifest.tensors {
            if me.dtype != dtype_name() {
                return Err(bad(format!(
                    "{}: dtype {} does not match build precision {}",
                    me.name,
                    me.dtype,
                    dtype_name()
                )));
            }
            let id = self
                .id_by_name(&me.name)
                .ok_or_else(|| bad(format!("unknown tensor {}", me.name)))?;
            if self.entry(id).shape != me.shape {
                return Err(bad(format!(
                    "{}: shape {:?} vs expected {:?}",
                    me.name,
                    me.shape,
                    self.entry(id).shape
                )));
            }
            let n = crate::tensor::numel(&me.shape);
            let start = me.byte_offset as usize;
            let end = start + n * elem;
            if end > payload.len() {
                return Err(bad(format!("{}: payload truncated", me.name)));
            }
            let data = self.data_mut(id);
            data.clear();
            for chunk in payload[start..end].chunks_exact(elem) {
                data.push(Real::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        // a container must determine the model completely: leaving some
        // parameters at their initial values is a silent mismatch
        if manifest.tensors.len() != self.entries.len() {
            let loaded: std::collections::HashSet<&str> =
                manifest.tensors.iter().map(|t| t.name.as_str()).collect();
            let missing = self
                .entries
                .iter()
                .find(|e| !loaded.contains(e.name.as_str()))
                .map(|e| e.name.clone())
                .unwrap_or_default();
            return Err(bad(format!(
                "{} of {} parameters covered; {missing} missing",
                manifest.tensors.len(),
                self.entries.len()
            )));
        }
        Ok(())
    }
}
