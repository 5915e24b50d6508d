//! Binary checkpoint format.
//!
//! Layout (all integers little-endian): magic `KGCCKPT\0`, `u32` version,
//! `u32` length-prefixed architecture string, `u32` tensor count, then per
//! tensor a length-prefixed name, `u64` rows, `u64` cols and the raw `f64`
//! values.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"KGCCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Architecture descriptor plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: String,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint<W: Write>(w: &mut W, architecture: &str, params: &ParamStore) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_str(w, architecture)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        write_str(w, name)?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = u32::from_le_bytes(take(r)?) as usize;
    if len > 1 << 20 {
        return Err(bad(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    String::from_utf8(buf).map_err(|_| bad("non-utf8 string"))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    if &take::<8, _>(r)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let architecture = read_str(r)?;
    let count = u32::from_le_bytes(take(r)?);
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = read_str(r)?;
        let rows = u64::from_le_bytes(take(r)?) as usize;
        let cols = u64::from_le_bytes(take(r)?) as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| bad("tensor too large"))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take(r)?));
        }
        params.add(&name, Tensor::from_vec(rows, cols, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { architecture, params })
}

pub fn save_checkpoint(path: &Path, architecture: &str, params: &ParamStore) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, architecture, params)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "w",
            Tensor::from_vec(2, 2, vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300]).unwrap(),
        );
        s.add("b", Tensor::zeros(1, 2));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "rgcn d=4", &sample()).unwrap();
        let ck = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.architecture, "rgcn d=4");
        assert_eq!(ck.params, sample());
    }

    #[test]
    fn corrupt_inputs_are_errors() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "x", &sample()).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(&mut wrong.as_slice()).is_err());
        let mut ver = buf.clone();
        ver[8] = 9;
        assert!(read_checkpoint(&mut ver.as_slice()).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }
}
