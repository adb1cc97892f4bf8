//! Self-describing binary container for real and complex tensors.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "CVSPTNSR"
//! version      u16      = 1
//! meta_count   u32
//!   key        u32 length + UTF-8 bytes
//!   value      u32 length + UTF-8 bytes
//! tensor_count u32
//!   name       u32 length + UTF-8 bytes
//!   dtype      u8       1 = f64, 2 = complex f64 (re, im interleaved)
//!   ndim       u8       <= 8
//!   dims       u64 * ndim
//!   sample_rate f64     0 when not applicable
//!   payload    8 bytes per real value, 16 per complex value, row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CVSPTNSR";
pub const VERSION: u16 = 1;
const MAX_NDIM: usize = 8;
const MAX_STRING: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Real(v) => v.len(),
            TensorData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub sample_rate: f64,
    pub data: TensorData,
}

impl Tensor {
    pub fn real(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::build(name.into(), dims, TensorData::Real(data))
    }

    pub fn complex(name: impl Into<String>, dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        Self::build(name.into(), dims, TensorData::Complex(data))
    }

    fn build(name: String, dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > MAX_NDIM {
            return Err(Error::MalformedTensor(format!("{} dimensions", dims.len())));
        }
        let count = element_count(&dims)
            .ok_or_else(|| Error::MalformedTensor("dimension product overflows".into()))?;
        if count != data.len() {
            return Err(Error::MalformedTensor(format!(
                "tensor `{name}`: dims {dims:?} need {count} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name,
            dims,
            sample_rate: 0.0,
            data,
        })
    }

    pub fn with_sample_rate(mut self, rate: f64) -> Self {
        self.sample_rate = rate;
        self
    }

    pub fn as_real(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Ok(v),
            TensorData::Complex(_) => Err(Error::MalformedTensor(format!(
                "tensor `{}` is complex, expected real",
                self.name
            ))),
        }
    }

    pub fn as_complex(&self) -> Result<&[Complex64]> {
        match &self.data {
            TensorData::Complex(v) => Ok(v),
            TensorData::Real(_) => Err(Error::MalformedTensor(format!(
                "tensor `{}` is real, expected complex",
                self.name
            ))),
        }
    }

    pub fn expect_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::MalformedTensor(format!(
                "tensor `{}` has dims {:?}, expected {dims:?}",
                self.name, self.dims
            )));
        }
        Ok(())
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Named tensors plus string metadata, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorBundle {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::MalformedTensor(format!("missing tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::MalformedTensor(format!("missing metadata `{key}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(match t.data {
                TensorData::Real(_) => 1,
                TensorData::Complex(_) => 2,
            });
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.sample_rate.to_le_bytes());
            match &t.data {
                TensorData::Real(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::Complex(v) => {
                    for c in v {
                        out.extend_from_slice(&c.re.to_le_bytes());
                        out.extend_from_slice(&c.im.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::MalformedTensor("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::MalformedTensor(format!("unsupported version {version}")));
        }
        let mut bundle = TensorBundle::new();
        let meta_count = r.u32()? as usize;
        for _ in 0..meta_count {
            let k = r.string()?;
            let v = r.string()?;
            bundle.meta.insert(k, v);
        }
        let tensor_count = r.u32()? as usize;
        for _ in 0..tensor_count {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            if ndim > MAX_NDIM {
                return Err(Error::MalformedTensor(format!("{ndim} dimensions")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = u64::from_le_bytes(r.array()?);
                dims.push(usize::try_from(d).map_err(|_| {
                    Error::MalformedTensor(format!("dimension {d} too large"))
                })?);
            }
            let sample_rate = f64::from_le_bytes(r.array()?);
            let count = element_count(&dims)
                .ok_or_else(|| Error::MalformedTensor("dimension product overflows".into()))?;
            let width = match dtype {
                1 => 8,
                2 => 16,
                other => return Err(Error::MalformedTensor(format!("unknown dtype {other}"))),
            };
            let payload_len = count
                .checked_mul(width)
                .ok_or_else(|| Error::MalformedTensor("payload size overflows".into()))?;
            let payload = r.take(payload_len)?;
            let data = if dtype == 1 {
                TensorData::Real(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            } else {
                TensorData::Complex(
                    payload
                        .chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..].try_into().unwrap()),
                            )
                        })
                        .collect(),
                )
            };
            bundle.tensors.push(Tensor {
                name,
                dims,
                sample_rate,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedTensor(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(bundle)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::MalformedTensor(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > MAX_STRING {
            return Err(Error::MalformedTensor(format!("string of {len} bytes")));
        }
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::MalformedTensor("invalid UTF-8".into()))
    }
}
