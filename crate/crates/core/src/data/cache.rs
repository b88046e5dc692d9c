//! Versioned binary cache: header, then little-endian `f32` features and `u32` labels.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};

const MAGIC: &[u8; 4] = b"FSDS";
const VERSION: u32 = 1;

pub fn encode(data: &Dataset) -> Vec<u8> {
    let name = data.name.as_bytes();
    let mut out = Vec::with_capacity(28 + name.len() + 4 * data.features().len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((data.len() as u64).to_le_bytes());
    out.extend((data.dim() as u32).to_le_bytes());
    out.extend((data.n_classes() as u32).to_le_bytes());
    out.extend((name.len() as u32).to_le_bytes());
    out.extend_from_slice(name);
    for v in data.features() {
        out.extend(v.to_le_bytes());
    }
    for l in data.labels() {
        out.extend(l.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.saturating_add(n);
        if end > self.bytes.len() {
            return Err(DataError::Truncated {
                path: "<cache>".into(),
                needed: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32le(self.take(4)?))
    }
}

fn u32le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(DataError::Invalid("not a dataset cache file".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(DataError::Invalid(format!("unsupported cache version {version}")));
    }
    let mut n = [0u8; 8];
    n.copy_from_slice(cur.take(8)?);
    let n = u64::from_le_bytes(n) as usize;
    let dim = cur.u32()? as usize;
    let n_classes = cur.u32()? as usize;
    let name_len = cur.u32()? as usize;
    let name = String::from_utf8(cur.take(name_len)?.to_vec())
        .map_err(|_| DataError::Invalid("cache name is not utf-8".into()))?;
    let features = cur
        .take(n.saturating_mul(dim).saturating_mul(4))?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let labels = cur.take(n.saturating_mul(4))?.chunks_exact(4).map(u32le).collect();
    Dataset::new(name, dim, n_classes, features, labels)
}

pub fn write_cache(path: &Path, data: &Dataset) -> Result<(), DataError> {
    fs::write(path, encode(data)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_cache(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_cache_is_rejected() {
        let d = Dataset::new("x", 1, 2, vec![0.5], vec![1]).unwrap();
        let bytes = encode(&d);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"nope").is_err());
    }
}
