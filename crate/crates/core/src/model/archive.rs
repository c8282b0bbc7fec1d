//! Named-tensor archive.
//!
//! ```text
//! magic    8 bytes  "MAESTWTS"
//! version  u16      1
//! count    u32
//! count × { name_len u16, name utf-8, rank u8, dims u32 × rank, dtype u8 (0 = f32), offset u64 }
//! payload  little-endian f32, offsets relative to the payload start
//! ```
//! All integers are little-endian.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::linalg::Scalar;

const MAGIC: &[u8; 8] = b"MAESTWTS";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedTensors {
    pub tensors: Vec<NamedTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("archive truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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

impl NamedTensors {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| Error::Format(format!("rank of {} too large", t.name)))?;
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!(
                    "{}: {} values for shape {:?}",
                    t.name,
                    t.data.len(),
                    t.dims
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for &d in &t.dims {
                let d =
                    u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(DTYPE_F32);
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err(Error::Format("not a weight archive (bad magic)".into()));
        }
        let version = c.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {version}"
            )));
        }
        let count = c.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
            let rank = c.u8()? as usize;
            let dims = (0..rank)
                .map(|_| c.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let dtype = c.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!(
                    "{name}: unsupported dtype tag {dtype}"
                )));
            }
            let offset = c.u64()?;
            manifest.push((name, dims, offset));
        }
        let payload = &bytes[c.pos..];
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, dims, offset) in manifest {
            let n: usize = dims.iter().product();
            if offset != expected_offset {
                return Err(Error::Format(format!(
                    "{name}: offset {offset}, expected {expected_offset}"
                )));
            }
            let start = offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(Error::Format(format!("{name}: payload truncated")));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            expected_offset = end as u64;
            tensors.push(NamedTensor { name, dims, data });
        }
        if expected_offset as usize != payload.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

impl<T: Scalar> ModelWeights<T> {
    pub fn to_named(&self) -> NamedTensors {
        NamedTensors {
            tensors: self
                .named()
                .into_iter()
                .map(|(name, dims, v)| NamedTensor {
                    name,
                    dims,
                    data: v.iter().map(|x| x.as_f32()).collect(),
                })
                .collect(),
        }
    }

    /// Validates names and shapes against `cfg`: unknown names and shape
    /// mismatches are rejected, and all missing names are reported together.
    pub fn from_named(named: &NamedTensors, cfg: &ModelConfig) -> Result<Self> {
        let mut w = ModelWeights::<T>::zeros(cfg)?;
        let layout = cfg.layout();
        let by_name: BTreeMap<&str, &NamedTensor> =
            named.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let known: BTreeSet<&str> = layout.iter().map(|(n, _)| n.as_str()).collect();
        let unknown: Vec<String> = by_name
            .keys()
            .filter(|n| !known.contains(*n))
            .map(|n| n.to_string())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownTensor(unknown));
        }
        let missing: Vec<String> = layout
            .iter()
            .filter(|(n, _)| !by_name.contains_key(n.as_str()))
            .map(|(n, _)| n.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingTensor(missing));
        }
        for ((name, shape), slot) in layout.iter().zip(w.slots_mut()) {
            let t = by_name[name.as_str()];
            if &t.dims != shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.dims.clone(),
                });
            }
            for (dst, &src) in slot.iter_mut().zip(&t.data) {
                *dst = T::from_f32(src);
            }
        }
        Ok(w)
    }
}

pub fn weights_save<T: Scalar>(weights: &ModelWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    weights.check_finite()?;
    weights.to_named().save(path)
}

pub fn weights_load(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ModelWeights<f32>> {
    ModelWeights::from_named(&NamedTensors::load(path)?, cfg)
}
