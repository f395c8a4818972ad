//! Classifier checkpoints.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! magic  b"PCBGNCKP"
//! u32    format version
//! u64    metadata length, then that many bytes of JSON (the state without weights)
//! u64    weight count, then that many f32 weights
//! ```

use std::fs;
use std::path::Path;

use pcbgen_core::classifier::ClassifierState;
use pcbgen_core::nn::Network;

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"PCBGNCKP";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(state: &ClassifierState) -> Result<Vec<u8>> {
    let mut meta = state.clone();
    let params = std::mem::take(&mut meta.net.params);
    let non_finite = [meta.label_mean, meta.label_scale, meta.response_mean, meta.response_scale, meta.threshold]
        .iter()
        .any(|v| !v.is_finite());
    if non_finite {
        return Err(Error::format("checkpoint", "state holds a non-finite scalar"));
    }
    let json = serde_json::to_vec(&meta).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    let mut out = Vec::with_capacity(28 + json.len() + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ClassifierState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("version {version}, this build reads {VERSION}"),
        ));
    }
    let meta_len = r.u64()? as usize;
    let mut state: ClassifierState = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::format("checkpoint", e.to_string()))?;
    let n = r.u64()? as usize;
    let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "weight count overflow"))?)?;
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = &state.net;
    state.net = Network::from_params(net.cfg.clone(), net.in_channels, net.in_h, net.in_w, params)
        .ok_or_else(|| Error::format("checkpoint", "weight count does not match the network shape"))?;
    Ok(state)
}

pub fn write_checkpoint(path: &Path, state: &ClassifierState) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<ClassifierState> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}
