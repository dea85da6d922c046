//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! "ECE1"  u32 version
//! u32 d_model  u32 blocks  u32 heads  u32 lora_rank  u32 patch  u32 canvas
//! u32 prompt_tokens  u32 mlp_ratio  u64 codec_seed
//! u32 parameter count
//! per parameter: u32 name length, name bytes (UTF-8), u32 ndim,
//!                u32 dims…, f32 values…
//! u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{NetConfig, VelocityNet};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"ECE1";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(net: &VelocityNet) -> Result<Vec<u8>> {
    let c = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.d_model,
        c.blocks,
        c.heads,
        c.lora_rank,
        c.patch,
        c.canvas,
        c.prompt_tokens,
        c.mlp_ratio,
    ] {
        put_u32(&mut out, v)?;
    }
    out.extend_from_slice(&c.codec_seed.to_le_bytes());
    put_u32(&mut out, net.params().len())?;
    for p in net.params().iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len())?;
        for &d in p.value.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parses and CRC-checks a checkpoint.
pub fn decode(bytes: &[u8]) -> Result<(NetConfig, ParamStore)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing ECE1 magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = NetConfig {
        d_model: r.u32()?,
        blocks: r.u32()?,
        heads: r.u32()?,
        lora_rank: r.u32()?,
        patch: r.u32()?,
        canvas: r.u32()?,
        prompt_tokens: r.u32()?,
        mlp_ratio: r.u32()?,
        codec_seed: r.u64()?,
    };
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("shape of {name} overflows")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if store.contains(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.insert(name, Tensor::new(&shape, data)?, false);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes before CRC",
            body.len() - r.pos
        )));
    }
    Ok((config, store))
}

pub fn save(net: &VelocityNet, path: &Path) -> Result<()> {
    let bytes = encode(net)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; with `expected`, any architecture difference is an
/// error listing the differing fields.
pub fn load(path: &Path, expected: Option<&NetConfig>) -> Result<VelocityNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (config, store) = decode(&bytes)?;
    if let Some(exp) = expected {
        let diff = exp.diff(&config);
        if !diff.is_empty() {
            return Err(Error::ArchitectureMismatch(format!(
                "config vs {}: {}",
                path.display(),
                diff.join(", ")
            )));
        }
    }
    VelocityNet::from_params(config, store)
}
