//! Versioned little-endian binary container for named tensor groups.
//!
//! Layout, in order:
//!
//! | field        | encoding                                              |
//! |--------------|-------------------------------------------------------|
//! | magic        | `b"WGCK"`                                             |
//! | version      | u32                                                   |
//! | dtype        | u8 (0 = f32, 1 = f64)                                 |
//! | step         | u64                                                   |
//! | config hash  | 32 bytes (SHA-256 of the canonical config JSON)       |
//! | meta         | u64 length + UTF-8 JSON                               |
//! | rng          | seed u64, stream u64, word position u128              |
//! | groups       | u32 count, then per group: name, u32 entry count, entries |
//! | entry        | name, lr_scale f64, trainable u8, u32 rank, u64 dims, data |
//! | checksum     | 32 bytes (SHA-256 of everything before it)            |
//!
//! Names are a u32 byte length followed by UTF-8.

use std::path::Path;

use sha2::{Digest, Sha256};
use wingan_tensor::{DType, ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"WGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint holds {found:?} values, {expected:?} requested")]
    DType { found: Option<DType>, expected: DType },
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing group {0}")]
    MissingGroup(String),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub lr_scale: f64,
    pub trainable: bool,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group<T> {
    pub name: String,
    pub entries: Vec<Entry<T>>,
}

impl<T: Real> Group<T> {
    pub fn from_store(name: &str, store: &ParamStore<T>) -> Self {
        Self {
            name: name.to_string(),
            entries: store
                .iter()
                .map(|(_, p)| Entry {
                    name: p.name.clone(),
                    lr_scale: p.lr_scale,
                    trainable: p.trainable,
                    tensor: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Copies values into a store built from the same spec.
    pub fn load_into(&self, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        if self.entries.len() != store.len() {
            return Err(CheckpointError::Mismatch(format!(
                "group {} has {} entries, network has {}",
                self.name,
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id = store
                .id(&e.name)
                .ok_or_else(|| CheckpointError::Mismatch(format!("unknown parameter {}", e.name)))?;
            let p = store.get(id);
            if p.value.shape() != e.tensor.shape() || p.lr_scale != e.lr_scale || p.trainable != e.trainable {
                return Err(CheckpointError::Mismatch(format!("parameter {} differs in shape or scale", e.name)));
            }
            store.set_value(id, e.tensor.clone());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub config_hash: [u8; 32],
    pub meta: String,
    pub rng: RngState,
    pub groups: Vec<Group<T>>,
}

/// SHA-256 of a config's canonical serialized form.
pub fn config_hash(canonical: &str) -> [u8; 32] {
    Sha256::digest(canonical.as_bytes()).into()
}

fn put_name(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Malformed(format!("need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("name is not UTF-8".into()))
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn group(&self, name: &str) -> Result<&Group<T>, CheckpointError> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| CheckpointError::MissingGroup(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            put_name(&mut out, &g.name);
            out.extend_from_slice(&(g.entries.len() as u32).to_le_bytes());
            for e in &g.entries {
                put_name(&mut out, &e.name);
                out.extend_from_slice(&e.lr_scale.to_le_bytes());
                out.push(e.trainable as u8);
                out.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
                for &d in e.tensor.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in e.tensor.data() {
                    v.write_le(&mut out);
                }
            }
        }
        let sum: [u8; 32] = Sha256::digest(&out).into();
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 + 32 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let code = r.u8()?;
        if DType::from_code(code) != Some(T::DTYPE) {
            return Err(CheckpointError::DType {
                found: DType::from_code(code),
                expected: T::DTYPE,
            });
        }
        let step = r.u64()?;
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let meta_len = r.u64()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec()).map_err(|_| CheckpointError::Malformed("meta is not UTF-8".into()))?;
        let rng = RngState {
            seed: r.u64()?,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        let ngroups = r.u32()? as usize;
        let mut groups = Vec::with_capacity(ngroups);
        let size = T::DTYPE.size();
        for _ in 0..ngroups {
            let name = r.name()?;
            let n = r.u32()? as usize;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let ename = r.name()?;
                let lr_scale = r.f64()?;
                let trainable = r.u8()? != 0;
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
                let numel: usize = shape.iter().product();
                let raw = r.take(numel * size)?;
                let data: Vec<T> = raw.chunks_exact(size).map(T::read_le).collect();
                let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
                entries.push(Entry {
                    name: ename,
                    lr_scale,
                    trainable,
                    tensor,
                });
            }
            groups.push(Group { name, entries });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Self {
            step,
            config_hash,
            meta,
            rng,
            groups,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Reads only the dtype byte of a checkpoint file.
pub fn peek_dtype(bytes: &[u8]) -> Option<DType> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return None;
    }
    DType::from_code(bytes[8])
}
