//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! "SGSR"  u32 version (=1)
//! u32 model tensor count
//!   per tensor: u16 name length, UTF-8 name, u8 rank, u32 extent × rank, f32 × numel
//! u32 optimizer tensor count
//!   per tensor: same framing
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGSR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub model: Vec<NamedTensor>,
    pub optimizer: Vec<NamedTensor>,
}

fn write_section(out: &mut Vec<u8>, tensors: &[NamedTensor]) -> Result<()> {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Checkpoint(format!("tensor {} has too many dims", t.name)))?;
        if t.numel() != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} declares {:?} but holds {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::Checkpoint(format!("tensor {} extent overflows u32", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("file truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn section(&mut self, label: &str) -> Result<Vec<NamedTensor>> {
        let count = self.u32(&format!("{label} tensor count"))?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let what = format!("{label} tensor #{i}");
            let len = u16::from_le_bytes(self.take(2, &what)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(self.take(len, &what)?)
                .map_err(|_| Error::Checkpoint(format!("{what} has a non-UTF-8 name")))?
                .to_string();
            let rank = self.take(1, &name)?[0] as usize;
            let dims = (0..rank)
                .map(|_| self.u32(&name).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let bytes = self.take(numel * 4, &format!("payload of tensor {name}"))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        Ok(tensors)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_section(&mut out, &self.model)?;
        write_section(&mut out, &self.optimizer)?;
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("file truncated in header".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let model = r.section("model")?;
        let optimizer = r.section("optimizer")?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected bytes before the checksum",
                body.len() - r.pos
            )));
        }
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if stored != crc32fast::hash(body) {
            return Err(Error::Checkpoint("CRC32 mismatch, file is corrupt".into()));
        }
        Ok(Checkpoint { model, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn model_tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.model.iter().find(|t| t.name == name)
    }

    pub fn optimizer_tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.optimizer.iter().find(|t| t.name == name)
    }
}
