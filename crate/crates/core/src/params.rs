//! Flat named-array parameter files shared by forecaster and agent checkpoints.
//!
//! Layout (all integers little-endian):
//! `b"GPLT"`, `u32` version, `str` kind, `str` label, `u32` header count, then per header entry
//! `str` key + `u64` value, `u32` array count, then per array `str` name + `u64` length + `f64`
//! values. A `str` is a `u32` byte length followed by UTF-8 bytes.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"GPLT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("unsupported parameter file version {0}")]
    BadVersion(u32),
    #[error("corrupt parameter file: {0}")]
    Corrupt(String),
    #[error("expected {what} {expected}, found {found}")]
    Mismatch { what: String, expected: String, found: String },
    #[error("missing entry `{0}`")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamFile {
    pub kind: String,
    pub label: String,
    pub header: Vec<(String, u64)>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, ParamError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(ParamError::Corrupt(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| ParamError::Corrupt(e.to_string()))
}

impl ParamFile {
    pub fn new(kind: &str, label: &str) -> Self {
        Self { kind: kind.into(), label: label.into(), ..Default::default() }
    }

    pub fn header_value(&self, key: &str) -> Result<u64, ParamError> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| *v).ok_or_else(|| ParamError::Missing(key.into()))
    }

    pub fn array(&self, name: &str) -> Result<&[f64], ParamError> {
        self.arrays.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_slice()).ok_or_else(|| ParamError::Missing(name.into()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ParamError> {
        if self.kind != kind {
            return Err(ParamError::Mismatch { what: "kind".into(), expected: kind.into(), found: self.kind.clone() });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.kind)?;
        write_str(w, &self.label)?;
        w.write_all(&(self.header.len() as u32).to_le_bytes())?;
        for (k, v) in &self.header {
            write_str(w, k)?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, data) in &self.arrays {
            write_str(w, name)?;
            w.write_all(&(data.len() as u64).to_le_bytes())?;
            for x in data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ParamError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ParamError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(ParamError::BadVersion(version));
        }
        let kind = read_str(r)?;
        let label = read_str(r)?;
        let n_header = read_u32(r)?;
        let mut header = Vec::with_capacity(n_header as usize);
        for _ in 0..n_header {
            let k = read_str(r)?;
            header.push((k, read_u64(r)?));
        }
        let n_arrays = read_u32(r)?;
        let mut arrays = Vec::with_capacity(n_arrays as usize);
        for _ in 0..n_arrays {
            let name = read_str(r)?;
            let len = read_u64(r)? as usize;
            if len > 1 << 30 {
                return Err(ParamError::Corrupt(format!("array `{name}` length {len}")));
            }
            let mut bytes = vec![0u8; len * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push((name, data));
        }
        Ok(Self { kind, label, header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        crate::io_util::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ParamError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_bad_magic() {
        let mut f = ParamFile::new("test", "node-3");
        f.header.push(("n".into(), 4));
        f.arrays.push(("w".into(), vec![1.5, -2.0, f64::MIN_POSITIVE]));
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"GPLT");
        let back = ParamFile::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.header_value("n").unwrap(), 4);
        assert!(back.array("missing").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ParamFile::read_from(&mut bad.as_slice()), Err(ParamError::BadMagic)));
        assert!(ParamFile::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
    }
}
