//! `E2EVCKPT` checkpoint files.
//!
//! Layout: magic `E2EVCKPT`; u32 length + JSON metadata; u32 parameter
//! count; per parameter: u32 name length, name, u8 frozen flag, u32 group,
//! u32 rank, u32 dims, f32 values (all little-endian).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use egoexo_tensor::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::vlm::config::VlmConfig;
use crate::vlm::model::Vlm;

pub const CKPT_MAGIC: &[u8; 8] = b"E2EVCKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: VlmConfig,
    /// What produced the checkpoint (`teacher`, `student:<strategy>`, ...).
    pub role: String,
    /// Hash of the full run configuration.
    pub config_hash: String,
    /// Hashes of every input artifact, keyed by a short label.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Vlm<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(meta: &CheckpointMeta, model: &Vlm<f32>) -> Vec<u8> {
    let mut out = CKPT_MAGIC.to_vec();
    let json = serde_json::to_vec(meta).expect("serializable");
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params.len());
    for (_, p) in model.params.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.frozen as u8);
        put_u32(&mut out, p.group);
        put_u32(&mut out, p.value.rank());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, model: &Vlm<f32>) -> Result<String> {
    let bytes = encode_checkpoint(meta, model);
    io::write_bytes(path, &bytes)?;
    Ok(io::sha256_hex(&bytes))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing(format!("checkpoint {}", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8)? != CKPT_MAGIC {
        return Err(Error::format(path, "missing E2EVCKPT header"));
    }
    let n = r.u32()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::format(path, format!("metadata: {e}")))?;
    let mut model = Vlm::<f32>::new(meta.model.clone(), 0)?;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(Error::format(path, format!("{count} parameters stored, model defines {}", model.params.len())));
    }
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(path, "parameter name"))?;
        let frozen = r.take(1)?[0] != 0;
        let group = r.u32()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data: Vec<f32> =
            r.take(4 * numel)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let id = model.params.id(&name).ok_or_else(|| Error::format(path, format!("unknown parameter `{name}`")))?;
        let p = model.params.get_mut(id);
        if p.value.shape() != shape.as_slice() {
            return Err(Error::format(path, format!("`{name}` stored as {shape:?}, expected {:?}", p.value.shape())));
        }
        p.value = Tensor::new(shape, data)?;
        p.frozen = frozen;
        p.group = group;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(Checkpoint { meta, model })
}

/// SHA-256 over parameter names, shapes and values (in definition order).
pub fn param_hash(params: &ParamSet<f32>) -> String {
    let mut h = Sha256::new();
    for (_, p) in params.iter() {
        h.update(p.name.as_bytes());
        for &d in p.value.shape() {
            h.update((d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
