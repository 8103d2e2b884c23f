//! Binary parameter checkpoints.
//!
//! Layout (all text lines end in `\n`):
//!
//! ```text
//! FFUSION-CKPT v1
//! params <count>
//! then, for each parameter in lexicographic path order:
//!   <path> <rank> <dim0> ... <dimN>
//!   <product(dims) little-endian IEEE-754 f64 values, no separator>
//! ```
//!
//! Paths never contain whitespace. Gradients and optimizer state are not stored.

use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_TAG: &str = "FFUSION-CKPT v1";

pub fn checkpoint_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_TAG.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("params {}\n", store.len()).as_bytes());
    for (path, t) in store.iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(format!("{path} {} {}\n", t.rank(), dims.join(" ")).as_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse("checkpoint", "unexpected end of file"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::parse("checkpoint", "non-utf8 header"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse("checkpoint", "truncated tensor data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.line()? != CHECKPOINT_TAG {
        return Err(Error::parse("checkpoint", "missing FFUSION-CKPT v1 header"));
    }
    let count: usize = cur
        .line()?
        .strip_prefix("params ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse("checkpoint", "bad params line"))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let header = cur.line()?;
        let mut fields = header.split(' ');
        let path = fields
            .next()
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::parse("checkpoint", "empty parameter path"))?;
        let nums: Vec<usize> = fields
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse("checkpoint", format!("bad shape for `{path}`")))?;
        let (&rank, dims) = nums
            .split_first()
            .ok_or_else(|| Error::parse("checkpoint", format!("missing rank for `{path}`")))?;
        if dims.len() != rank {
            return Err(Error::parse("checkpoint", format!("rank mismatch for `{path}`")));
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(path, Tensor::new(dims, data)?)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse("checkpoint", "trailing bytes after last parameter"));
    }
    Ok(store)
}

pub fn write_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
