use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{otsu_threshold, rle_decode, rle_encode, BinaryMask, GrayImage, RleMask};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMSK";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreEntry {
    pub rle: RleMask,
    pub epoch: u32,
}

/// Per-sample feedback masks, kept run-length coded.
///
/// Writes are monotone in epoch: a sample's mask can only be replaced by one
/// from the same or a later epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskStore {
    entries: BTreeMap<String, StoreEntry>,
}

impl MaskStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn put(&mut self, id: &str, mask: &BinaryMask, epoch: u32) -> Result<()> {
        if let Some(existing) = self.entries.get(id) {
            if epoch < existing.epoch {
                return Err(Error::StaleEpoch {
                    id: id.to_string(),
                    epoch,
                    stored: existing.epoch,
                });
            }
        }
        self.entries.insert(
            id.to_string(),
            StoreEntry {
                rle: rle_encode(mask),
                epoch,
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<BinaryMask> {
        self.entries
            .get(id)
            .map(|e| rle_decode(&e.rle).expect("stored runs are valid"))
    }

    /// Stored mask, or the Otsu mask of `image` when the sample has none yet.
    pub fn get_or_otsu(&self, id: &str, image: &GrayImage) -> BinaryMask {
        self.get(id)
            .unwrap_or_else(|| otsu_threshold(image, 256).mask)
    }

    pub fn entry(&self, id: &str) -> Option<&StoreEntry> {
        self.entries.get(id)
    }

    pub fn epoch_of(&self, id: &str) -> Option<u32> {
        self.entries.get(id).map(|e| e.epoch)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Serialized form: magic, version, record count, then per record the id,
    /// epoch, height, width and run list, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, e) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&e.epoch.to_le_bytes());
            out.extend_from_slice(&(e.rle.height as u32).to_le_bytes());
            out.extend_from_slice(&(e.rle.width as u32).to_le_bytes());
            out.extend_from_slice(&(e.rle.runs.len() as u32).to_le_bytes());
            for r in &e.rle.runs {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a mask store file".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported mask store version {version}")));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let id = String::from_utf8(r.take(id_len)?.to_vec())
                .map_err(|_| Error::Format("sample id is not utf-8".into()))?;
            let epoch = r.u32()?;
            let height = r.u32()? as usize;
            let width = r.u32()? as usize;
            let n = r.u32()? as usize;
            let runs = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let rle = RleMask { height, width, runs };
            rle.validate()?;
            if entries.insert(id.clone(), StoreEntry { rle, epoch }).is_some() {
                return Err(Error::Format(format!("duplicate sample id `{id}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after mask store".into()));
        }
        Ok(Self { entries })
    }

    /// Rewrites the whole store file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated mask store".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
