//! Binary model checkpoints.
//!
//! Layout: the magic bytes, a little-endian `u32` header length, the model
//! configuration as JSON, one block per parameter (`u32` name length, UTF-8
//! name, `u32` rank, `u32` dims, `f32` values, all little-endian), and a
//! CRC32 of everything before it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArrivalNet, ModelConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 12] = b"ARRIVALNET/1";

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes<S: Scalar>(model: &ArrivalNet<S>) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64 + 4 * model.param_count());
    buf.extend_from_slice(MAGIC);
    let header = serde_json::to_vec(&model.config)?;
    put_u32(&mut buf, header.len())?;
    buf.extend_from_slice(&header);
    for (name, t) in model.store.iter() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<ArrivalNet<S>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing ARRIVALNET/1 magic".into()));
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let expected = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let found = crc32fast::hash(body);
    if expected != found {
        return Err(Error::Corrupt { expected, found });
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let header_len = r.u32()?;
    let config: ModelConfig = serde_json::from_slice(r.take(header_len)?)?;
    let mut store = ParamStore::new();
    while r.pos < body.len() {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("parameter too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| S::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        store.add(name, Tensor::new(&shape, data)?);
    }
    ArrivalNet::from_store(config, store)
}

pub fn save_checkpoint<S: Scalar>(model: &ArrivalNet<S>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ArrivalNet<S>> {
    from_bytes(&std::fs::read(path)?)
}
