//! UFEC embedding cache: pooled (pre-LayerNorm) token-state sums per row.
//!
//! ```text
//! "UFEC" | version: u32 = 1 | d_v: u32 | count: u64
//! count × { row_id: u64 | d_v × f32 }
//! ```
//!
//! All integers and floats little-endian. Entry order is preserved.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UFEC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
    index: HashMap<u64, usize>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cache dimension must be positive"));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn insert(&mut self, row_id: u64, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("cache insert", &[self.dim], &[vector.len()]));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "row {row_id}: non-finite value {bad}"
            )));
        }
        if self.index.contains_key(&row_id) {
            return Err(Error::invalid(format!("duplicate cache row {row_id}")));
        }
        self.index.insert(row_id, self.ids.len());
        self.ids.push(row_id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, row_id: u64) -> Result<&[f32]> {
        let i = *self.index.get(&row_id).ok_or(Error::CacheMiss(row_id))?;
        Ok(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&id.to_le_bytes())?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, origin: &str) -> Result<Self> {
        let fmt = |message: String| Error::Format {
            path: origin.to_string(),
            message,
        };
        let mut head = [0u8; 20];
        r.read_exact(&mut head)
            .map_err(|_| fmt("truncated header".into()))?;
        if &head[0..4] != MAGIC {
            return Err(fmt(format!("bad magic {:?}", &head[0..4])));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(head[12..20].try_into().unwrap());
        let mut cache = Self::new(dim).map_err(|e| fmt(e.to_string()))?;
        let mut buf = vec![0u8; 8 + 4 * dim];
        let mut vec = vec![0f32; dim];
        for k in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| fmt(format!("truncated at entry {k} of {count}")))?;
            let id = u64::from_le_bytes(buf[0..8].try_into().unwrap());
            for (j, v) in vec.iter_mut().enumerate() {
                *v = f32::from_le_bytes(buf[8 + 4 * j..12 + 4 * j].try_into().unwrap());
            }
            cache.insert(id, &vec).map_err(|e| fmt(e.to_string()))?;
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(fmt(format!("trailing bytes after {count} entries")));
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::read(
            BufReader::new(File::open(path)?),
            &path.display().to_string(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let mut c = EmbeddingCache::new(2).unwrap();
        c.insert(7, &[1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 8 + 8);
        assert_eq!(&buf[0..4], b"UFEC");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 7);
        assert_eq!(f32::from_le_bytes(buf[32..36].try_into().unwrap()), -2.5);
    }

    #[test]
    fn errors() {
        let c = EmbeddingCache::new(3).unwrap();
        assert!(matches!(c.get(5), Err(Error::CacheMiss(5))));
        let mut c = EmbeddingCache::new(2).unwrap();
        c.insert(1, &[0.0, 0.0]).unwrap();
        assert!(c.insert(1, &[0.0, 0.0]).is_err());
        assert!(c.insert(2, &[0.0]).is_err());
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        buf.pop();
        assert!(EmbeddingCache::read(&buf[..], "mem").is_err());
        buf.extend_from_slice(&[0, 0]);
        assert!(EmbeddingCache::read(&buf[..], "mem").is_err());
    }
}
