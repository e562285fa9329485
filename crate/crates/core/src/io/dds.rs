//! `DDS1` synthetic-set files.
//!
//! ```text
//! "DDS1" | version count C H W K ipc  (u32 LE each)
//! pixels  count·C·H·W × f32 LE
//! labels  count × u16 LE
//! manifest length u32 LE, then that many bytes of JSON
//! ```

use std::fs;
use std::path::Path;

use crate::distill::SyntheticSet;
use crate::error::{Error, Result};
use crate::io::RunManifest;
use crate::tensor::Tensor;

pub const DDS_MAGIC: [u8; 4] = *b"DDS1";
pub const DDS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 7 * 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSetFile {
    pub set: SyntheticSet,
    pub manifest: RunManifest,
}

fn invariant(msg: impl Into<String>) -> Error {
    Error::SetFile(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            invariant(format!(
                "length: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl SyntheticSetFile {
    pub fn new(set: SyntheticSet, manifest: RunManifest) -> Self {
        SyntheticSetFile { set, manifest }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.set;
        let shape = s.images.shape();
        if s.num_classes > u16::MAX as usize + 1 {
            return Err(invariant(format!("labels: {} classes do not fit in u16", s.num_classes)));
        }
        let json = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * s.images.numel() + 2 * s.len() + 4 + json.len());
        out.extend_from_slice(&DDS_MAGIC);
        for v in [DDS_VERSION as usize, s.len(), shape[1], shape[2], shape[3], s.num_classes, s.ipc] {
            let v = u32::try_from(v).map_err(|_| invariant(format!("header field {v} exceeds u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in s.images.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &s.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != DDS_MAGIC {
            return Err(invariant(format!("magic: expected \"DDS1\", found {magic:02x?}")));
        }
        let version = r.u32("version")?;
        if version != DDS_VERSION {
            return Err(invariant(format!("version: expected {DDS_VERSION}, found {version}")));
        }
        let mut dims = [0usize; 6];
        for (d, name) in dims.iter_mut().zip(["count", "C", "H", "W", "K", "ipc"]) {
            *d = r.u32(name)? as usize;
        }
        let [count, c, h, w, k, ipc] = dims;
        if count != k * ipc {
            return Err(invariant(format!("count: header count {count} != K·ipc = {k}·{ipc}")));
        }
        if count == 0 || c == 0 || h == 0 || w == 0 {
            return Err(invariant(format!("shape: empty set {count}x{c}x{h}x{w}")));
        }
        let numel = count
            .checked_mul(c * h * w)
            .ok_or_else(|| invariant("length: pixel count overflows"))?;
        let pixel_bytes = numel.checked_mul(4).ok_or_else(|| invariant("length: pixel count overflows"))?;
        let pixels: Vec<f32> = r
            .take(pixel_bytes, "pixel payload")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let labels: Vec<usize> = r
            .take(2 * count, "labels")?
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        let json_len = r.u32("manifest length")? as usize;
        let json = r.take(json_len, "manifest")?;
        if r.pos != bytes.len() {
            return Err(invariant(format!(
                "length: {} trailing bytes after the manifest",
                bytes.len() - r.pos
            )));
        }
        let set = SyntheticSet::new(Tensor::new(vec![count, c, h, w], pixels)?, k, ipc)?;
        if let Some(i) = (0..count).find(|&i| labels[i] != set.labels[i]) {
            return Err(invariant(format!(
                "labels: image {i} has label {}, expected {} for class-blocked order",
                labels[i], set.labels[i]
            )));
        }
        let manifest: RunManifest =
            serde_json::from_slice(json).map_err(|e| invariant(format!("manifest: {e}")))?;
        Ok(SyntheticSetFile { set, manifest })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
