//! Binary weight files.
//!
//! Layout (little-endian): `b"RSTW"`, u32 version, u32 tensor count, then per
//! tensor a u16 name length, the UTF-8 name, a u8 rank, u64 dims and the f32
//! payload. A CRC32 of every preceding byte closes the file.

use std::path::Path;

use crate::error::{Result, RstError};
use crate::params::WeightStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSTW";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(ws: &WeightStore<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(16 + 4 * ws.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ws.len() as u32).to_le_bytes());
    for (name, t) in ws.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| RstError::invalid("encode_weights", format!("name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(bytes);
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(RstError::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a weight file image; `path` only labels errors.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<WeightStore<T>> {
    if bytes.len() < 16 {
        return Err(RstError::format(path, "file too short for a weight file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(RstError::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let mut r = Reader { buf: body, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(RstError::format(path, "bad magic, expected RSTW"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RstError::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut ws = WeightStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| RstError::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (body.len() - r.pos) / 4)
            .ok_or_else(|| RstError::format(path, format!("tensor '{name}' exceeds file size")))?;
        let payload = r.take(4 * numel)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        ws.insert(name, Tensor::new(&shape, data)?)
            .map_err(|e| RstError::format(path, e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(RstError::format(path, "trailing bytes after last tensor"));
    }
    Ok(ws)
}

pub fn save<T: Scalar>(ws: &WeightStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ws)?).map_err(|e| RstError::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<WeightStore<T>> {
    let bytes = std::fs::read(path).map_err(|e| RstError::io(path, e))?;
    decode(&bytes, path)
}
