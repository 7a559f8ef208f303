//! UFNP parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "UFNP" | version: u32 = 1 | count: u32
//! count × { name_len: u32 | name: utf-8 | ndims: u32 | dims: ndims × u32 | values: f64 × numel }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"UFNP";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R, origin: &str) -> Result<ParamStore> {
    let fmt = |message: String| Error::Format {
        path: origin.to_string(),
        message,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| fmt(format!("parameter name: {e}")))?;
        if store.id(&name).is_some() {
            return Err(fmt(format!("duplicate parameter `{name}`")));
        }
        let ndims = read_u32(&mut r)? as usize;
        let shape = (0..ndims)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| fmt(format!("`{name}`: {e}")))?;
        store.add(name, t);
    }
    Ok(store)
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    write_params(BufWriter::new(File::create(path)?), store)
}

pub fn load(path: &Path) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    read_params(
        BufReader::new(File::open(path)?),
        &path.display().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
        store.add("layer.w", Tensor::new(vec![1, 2], vec![0.25, 3.0]).unwrap());
        let mut buf = Vec::new();
        write_params(&mut buf, &store).unwrap();
        assert_eq!(&buf[0..4], b"UFNP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        // first blob: name_len=1, 'a', ndims=1, dim=2, two f64
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(buf[16], b'a');
        assert_eq!(f64::from_le_bytes(buf[25..33].try_into().unwrap()), 1.5);
        let back = read_params(&buf[..], "mem").unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_params(&b"NOPE\x01\0\0\0\0\0\0\0"[..], "mem"),
            Err(Error::Format { .. })
        ));
        let mut store = ParamStore::new();
        store.add("a", Tensor::scalar(1.0));
        let mut buf = Vec::new();
        write_params(&mut buf, &store).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_params(&buf[..], "mem").is_err());
    }
}
