//! Named-tensor archive ("VFT1").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"VFT1"
//! u32                tensor count
//! per tensor:
//!   u16              name length in bytes
//!   [u8]             UTF-8 name
//!   u8               rank
//!   u32 × rank       dims
//!   f32 × Π dims     payload, row-major
//! ```

use std::path::Path;

use super::FeatureError;

pub const MAGIC: &[u8; 4] = b"VFT1";
const MAX_RANK: u8 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    /// Narrows `f64` values to the on-disk `f32` representation.
    pub fn from_f64(name: impl Into<String>, dims: Vec<u32>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            dims,
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorArchive {
    pub tensors: Vec<NamedTensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: NamedTensor) {
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor, FeatureError> {
        self.get(name)
            .ok_or_else(|| FeatureError::MissingTensor(name.to_string()))
    }

    /// Serializes the archive. Fails on non-finite payloads or malformed
    /// tensors so nothing invalid reaches disk.
    pub fn encode(&self) -> Result<Vec<u8>, FeatureError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFiniteValue(t.name.clone()));
            }
            if t.element_count() != t.data.len() {
                return Err(FeatureError::DimMismatch(format!(
                    "tensor {:?}: dims {:?} but {} values",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| FeatureError::CorruptHeader(format!("name too long: {}", t.name)))?;
            if t.dims.len() > MAX_RANK as usize {
                return Err(FeatureError::CorruptHeader(format!("rank too large: {}", t.name)));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| FeatureError::BadMagic)?;
        if magic != MAGIC {
            return Err(FeatureError::BadMagic);
        }
        let count = r.u32()?;
        let mut tensors: Vec<NamedTensor> = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| FeatureError::CorruptHeader("tensor name is not UTF-8".into()))?
                .to_string();
            if tensors.iter().any(|t| t.name == name) {
                return Err(FeatureError::CorruptHeader(format!("duplicate tensor {name:?}")));
            }
            let rank = r.u8()?;
            if rank > MAX_RANK {
                return Err(FeatureError::CorruptHeader(format!(
                    "tensor {name:?} has rank {rank}"
                )));
            }
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| {
                    FeatureError::CorruptHeader(format!(
                        "tensor {name:?} declares dims {dims:?} but the payload is shorter"
                    ))
                })?;
            let raw = r.take(n * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFiniteValue(name));
            }
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.remaining() != 0 {
            return Err(FeatureError::CorruptHeader(format!(
                "{} trailing bytes after last tensor",
                r.remaining()
            )));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), FeatureError> {
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|e| FeatureError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let bytes = std::fs::read(path).map_err(|e| FeatureError::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        if n > self.remaining() {
            return Err(FeatureError::CorruptHeader(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FeatureError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FeatureError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
