//! Binary model container shared by every model type.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SNSRMDL\0"
//! version    u32
//! type tag   u32      1 = grace, 2 = linear, 3 = hierarchical
//! config     u32 length + UTF-8 JSON
//! vocab hash 32 bytes SHA-256 over the token list
//! vocab      u32 count, then per token u32 length + UTF-8 bytes
//! tensors    u32 count, then per tensor:
//!              u16 name length + name, u8 ndim, u32 per dim,
//!              f32 values in row-major order
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"SNSRMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Grace = 1,
    Linear = 2,
    Hierarchical = 3,
}

impl ModelKind {
    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(ModelKind::Grace),
            2 => Some(ModelKind::Linear),
            3 => Some(ModelKind::Hierarchical),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("unknown model type tag {0}")]
    UnknownKind(u32),
    #[error("expected a {expected:?} model, found {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("vocabulary hash mismatch")]
    VocabHash,
    #[error("truncated or corrupt model file: {0}")]
    Corrupt(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("bad config block: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(name: &str, shape: &[usize], values: impl IntoIterator<Item = f64>) -> Self {
        Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: values.into_iter().map(|v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub config_json: String,
    pub vocab: Vec<String>,
    pub tensors: Vec<Tensor>,
}

pub fn vocab_hash<S: AsRef<str>>(tokens: &[S]) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_ref().as_bytes());
        h.update([b'\n']);
    }
    h.finalize().into()
}

impl ModelFile {
    pub fn vocab_hash(&self) -> [u8; 32] {
        vocab_hash(&self.vocab)
    }

    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&Tensor, ContainerError> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ContainerError::MissingTensor(name.into()))?;
        if t.shape != shape {
            return Err(ContainerError::Shape {
                name: name.into(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        put_str32(&mut out, &self.config_json);
        out.extend_from_slice(&self.vocab_hash());
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for t in &self.vocab {
            put_str32(&mut out, t);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::Version(version));
        }
        let tag = r.u32()?;
        let kind = ModelKind::from_tag(tag).ok_or(ContainerError::UnknownKind(tag))?;
        let config_json = r.str32()?;
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let n = r.u32()? as usize;
        let mut vocab = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            vocab.push(r.str32()?);
        }
        if vocab_hash(&vocab) != hash {
            return Err(ContainerError::VocabHash);
        }
        let nt = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(nt.min(1024));
        for _ in 0..nt {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| ContainerError::Corrupt("tensor name is not UTF-8".into()))?;
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(4).ok_or_else(|| ContainerError::Corrupt("size".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::Corrupt("trailing bytes".into()));
        }
        Ok(ModelFile {
            kind,
            config_json,
            vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let io = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|source| ContainerError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&buf)
    }

    pub fn expect_kind(&self, expected: ModelKind) -> Result<(), ContainerError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(ContainerError::WrongKind {
                expected,
                found: self.kind,
            })
        }
    }
}

/// Reads just the type tag of a model file.
pub fn peek_kind(path: &Path) -> Result<ModelKind, ContainerError> {
    let mut head = [0u8; 16];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if &head[..8] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let tag = u32::from_le_bytes(head[12..16].try_into().expect("4 bytes"));
    ModelKind::from_tag(tag).ok_or(ContainerError::UnknownKind(tag))
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ContainerError::Corrupt(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str32(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ContainerError::Corrupt("invalid UTF-8".into()))
    }
}
