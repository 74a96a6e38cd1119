//! `DRCNN1` model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DRCNN1"  version:u8
//! arch_len:u32  arch:utf8        "format <float32|float64|int8>\n" + architecture text
//! count:u32
//! count x entry:
//!   name_len:u16 name:utf8
//!   dtype:u8                     1=f32 2=f64 3=i8 4=i32
//!   ndim:u8 dims:u32*ndim
//!   nquant:u32 (scale:f64 zero_point:i32)*nquant
//!   data                         numel * width(dtype)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"DRCNN1";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    I8 = 3,
    I32 = 4,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::I8 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            1 => DType::F32,
            2 => DType::F64,
            3 => DType::I8,
            4 => DType::I32,
            t => return Err(Error::Format(format!("unknown dtype tag {}", t))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl Data {
    pub fn dtype(&self) -> DType {
        match self {
            Data::F32(_) => DType::F32,
            Data::F64(_) => DType::F64,
            Data::I8(_) => DType::I8,
            Data::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::F64(v) => v.len(),
            Data::I8(v) => v.len(),
            Data::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Float payload widened to `f64`; `None` for integer payloads.
    pub fn to_f64(&self) -> Option<Vec<f64>> {
        match self {
            Data::F32(v) => Some(v.iter().map(|&x| x as f64).collect()),
            Data::F64(v) => Some(v.clone()),
            _ => None,
        }
    }
}

/// Quantization metadata attached to an entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantRecord {
    pub scale: f64,
    pub zero_point: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Data,
    pub quant: Vec<QuantRecord>,
}

impl Entry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Data) -> Self {
        Entry {
            name: name.into(),
            shape,
            data,
            quant: Vec::new(),
        }
    }

    pub fn with_quant(mut self, quant: Vec<QuantRecord>) -> Self {
        self.quant = quant;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    /// Payload format tag, e.g. `float32` or `int8`.
    pub format: String,
    /// Canonical architecture text.
    pub arch: String,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("missing entry `{}`", name)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        let arch = format!("format {}\n{}", self.format, self.arch);
        w.write_all(&(arch.len() as u32).to_le_bytes())?;
        w.write_all(arch.as_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let numel: usize = e.shape.iter().product();
            if numel != e.data.len() {
                return Err(Error::Format(format!(
                    "entry `{}`: shape {:?} vs {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            w.write_all(&(e.name.len() as u16).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.data.dtype() as u8, e.shape.len() as u8])?;
            for &d in &e.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&(e.quant.len() as u32).to_le_bytes())?;
            for q in &e.quant {
                w.write_all(&q.scale.to_le_bytes())?;
                w.write_all(&q.zero_point.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(numel * e.data.dtype().width());
            match &e.data {
                Data::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                Data::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                Data::I8(v) => buf.extend(v.iter().map(|&x| x as u8)),
                Data::I32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a DRCNN1 container".into()));
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", version)));
        }
        let arch_len = read_u32(&mut r)? as usize;
        let arch = String::from_utf8(read_bytes(&mut r, arch_len)?)
            .map_err(|_| Error::Format("architecture block is not UTF-8".into()))?;
        let (first, rest) = arch.split_once('\n').unwrap_or((&arch, ""));
        let format = first
            .strip_prefix("format ")
            .ok_or_else(|| Error::Format("architecture block lacks a format line".into()))?
            .to_string();
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let name = String::from_utf8(read_bytes(&mut r, name_len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let dtype = DType::from_tag(read_u8(&mut r)?)?;
            let ndim = read_u8(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let nquant = read_u32(&mut r)? as usize;
            let quant = (0..nquant)
                .map(|_| {
                    Ok(QuantRecord {
                        scale: f64::from_le_bytes(read_array(&mut r)?),
                        zero_point: i32::from_le_bytes(read_array(&mut r)?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = read_bytes(&mut r, numel * dtype.width())?;
            let data = match dtype {
                DType::F32 => Data::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => Data::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::I8 => Data::I8(raw.into_iter().map(|b| b as i8).collect()),
                DType::I32 => Data::I32(
                    raw.chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            entries.push(Entry {
                name,
                shape,
                data,
                quant,
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(Container {
            format,
            arch: rest.to_string(),
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Container::read_from(&bytes[..])
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(read_array::<R, 1>(r)?[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated container".into()))?;
    Ok(b)
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    r.take(n as u64).read_to_end(&mut b)?;
    if b.len() != n {
        return Err(Error::Format("truncated container".into()));
    }
    Ok(b)
}
