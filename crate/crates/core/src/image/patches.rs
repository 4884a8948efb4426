//! Aligned random crops and the `DAMP` patch container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "DAMP"  u32 version=1  u32 count  u32 size  u32 arity
//! u32 channels[arity]
//! for each patch, for each member, for each channel: size*size f32 (row-major)
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DAMP";
const VERSION: u32 = 1;

/// Aligned square crops. Each entry holds `arity` members, conventionally
/// `(input, target)` or `(input, guidance, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub size: usize,
    pub patches: Vec<Vec<Image>>,
}

impl PatchSet {
    pub fn new(size: usize, patches: Vec<Vec<Image>>) -> Result<Self> {
        let set = Self { size, patches };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let first = self.patches.first().ok_or_else(|| Error::InvalidArgument("empty patch set".into()))?;
        let channels: Vec<usize> = first.iter().map(Image::channels).collect();
        for p in &self.patches {
            if p.len() != channels.len()
                || p.iter().zip(&channels).any(|(m, &c)| m.shape() != (self.size, self.size, c))
            {
                return Err(Error::Shape("inconsistent patch members".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.patches.first().map_or(0, Vec::len)
    }

    pub fn member_channels(&self) -> Vec<usize> {
        self.patches.first().map(|p| p.iter().map(Image::channels).collect()).unwrap_or_default()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let channels = self.member_channels();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.size as u32, self.arity() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &c in &channels {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for p in &self.patches {
            for m in p {
                for &v in m.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a DAMP patch set".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported DAMP version {version}")));
        }
        let (count, size, arity) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if count == 0 || size == 0 || arity == 0 {
            return Err(Error::Format("DAMP header has zero count/size/arity".into()));
        }
        let channels: Vec<usize> = (0..arity).map(|_| r.u32().map(|c| c as usize)).collect::<Result<_>>()?;
        let mut patches = Vec::with_capacity(count);
        for _ in 0..count {
            let mut members = Vec::with_capacity(arity);
            for &c in &channels {
                let n = size * size * c;
                let raw = r.take(4 * n)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect();
                members.push(Image::new(size, size, c, data)?);
            }
            patches.push(members);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after DAMP payload".into()));
        }
        Self::new(size, patches)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
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
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated DAMP file".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Draws `count` aligned `size x size` crops. Each draw picks a group
/// uniformly, then a top-left corner uniformly; every member of the group is
/// cropped at the same coordinates.
pub fn sample_patches(groups: &[Vec<Image>], size: usize, count: usize, seed: u64) -> Result<PatchSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("patch count must be positive".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let arity = groups.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no images".into()))?;
    for g in groups {
        if g.len() != arity || arity == 0 {
            return Err(Error::Shape("all groups must have the same arity".into()));
        }
        let (h, w) = (g[0].height(), g[0].width());
        if g.iter().any(|m| m.height() != h || m.width() != w) {
            return Err(Error::Shape("group members must share spatial size".into()));
        }
        if h < size || w < size {
            return Err(Error::InvalidArgument(format!("patch size {size} exceeds image {h}x{w}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let g = &groups[rng.random_range(0..groups.len())];
        let y = rng.random_range(0..=g[0].height() - size);
        let x = rng.random_range(0..=g[0].width() - size);
        patches.push(g.iter().map(|m| m.crop(y, x, size, size)).collect::<Result<Vec<_>>>()?);
    }
    PatchSet::new(size, patches)
}
