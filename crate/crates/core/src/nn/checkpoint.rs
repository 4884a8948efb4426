//! The `DAMW` parameter container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "DAMW"  u32 version=1
//! u32 descriptor_len   descriptor: UTF-8 "key=value\n" lines
//! u32 tensor_count
//! per tensor: u32 name_len  name (UTF-8)  u32 len  f32 values[len]
//! ```
//!
//! The descriptor records the architecture (layer kinds, channel counts,
//! K); tensors follow in declaration order.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DAMW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub descriptor: Vec<(String, String)>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.descriptor.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses a descriptor value.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key).ok_or_else(|| Error::Format(format!("checkpoint descriptor lacks {key:?}")))?;
        raw.parse().map_err(|_| Error::Format(format!("checkpoint descriptor {key}={raw:?} is malformed")))
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut desc = String::new();
        for (k, v) in &self.descriptor {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidArgument(format!("descriptor entry {k:?}={v:?} is not representable")));
            }
            desc.push_str(&format!("{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, values) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a DAMW checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported DAMW version {version}")));
        }
        let dlen = r.u32()? as usize;
        let desc = r.text(dlen)?;
        let mut descriptor = Vec::new();
        for line in desc.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad descriptor line {line:?}")))?;
            descriptor.push((k.to_string(), v.to_string()));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = r.text(nlen)?.to_string();
            let len = r.u32()? as usize;
            let raw = r.take(4 * len)?;
            let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
            tensors.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after DAMW payload".into()));
        }
        Ok(Self { descriptor, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Format("truncated DAMW file".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format("DAMW text field is not UTF-8".into()))
    }
}
