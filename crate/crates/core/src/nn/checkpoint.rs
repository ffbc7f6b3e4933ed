//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//! `"TIKT"`, `u32` version, `u32` record count, then per record
//! `u32` name length, UTF-8 name, `u8` dtype (1 = f64), `u32` rank,
//! `rank x u64` dims, `f64` payload.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{NnError, Tensor};

pub const MAGIC: &[u8; 4] = b"TIKT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn encode_checkpoint(records: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| NnError::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let dtype = c.take(1)?[0];
        if dtype != DTYPE_F64 {
            return Err(NnError::Checkpoint(format!("{name}: unsupported dtype {dtype}")));
        }
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()));
        let n = n.ok_or_else(|| NnError::Checkpoint(format!("{name}: implausible shape {shape:?}")))?;
        let payload = c.take(n * 8)?;
        let data = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, records: &[(String, Tensor)]) -> Result<(), NnError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(records))?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Hex SHA-256 of the encoded records.
pub fn checkpoint_hash(records: &[(String, Tensor)]) -> String {
    hex::encode(Sha256::digest(encode_checkpoint(records)))
}

/// Stores a string as a rank-1 tensor of byte values.
pub fn text_record(name: &str, text: &str) -> (String, Tensor) {
    let data: Vec<f64> = text.bytes().map(f64::from).collect();
    (name.to_string(), Tensor::new(&[data.len()], data).expect("rank-1"))
}

pub fn record_text(t: &Tensor) -> Result<String, NnError> {
    let bytes: Option<Vec<u8>> =
        t.data().iter().map(|&v| (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8)).collect();
    let bytes = bytes.ok_or_else(|| NnError::Checkpoint("text record holds non-byte values".into()))?;
    String::from_utf8(bytes).map_err(|_| NnError::Checkpoint("text record is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_of_single_record() {
        let recs = vec![("ab".to_string(), Tensor::new(&[1, 2], vec![1.0, -0.5]).unwrap())];
        let b = encode_checkpoint(&recs);
        assert_eq!(&b[..4], b"TIKT");
        assert_eq!(b.len(), 4 + 4 + 4 + 4 + 2 + 1 + 4 + 16 + 16);
        assert_eq!(b[18], 1);
        assert_eq!(decode_checkpoint(&b).unwrap(), recs);
    }

    #[test]
    fn rejects_corruption() {
        let recs = vec![("w".to_string(), Tensor::zeros(&[3]))];
        let mut b = encode_checkpoint(&recs);
        assert!(decode_checkpoint(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode_checkpoint(&b).is_err());
    }

    #[test]
    fn text_records_round_trip() {
        let (n, t) = text_record("meta/stage", "stage2");
        assert_eq!(n, "meta/stage");
        assert_eq!(record_text(&t).unwrap(), "stage2");
    }
}
