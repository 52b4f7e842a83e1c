//! File formats: E2EV1 tensor files, JSON helpers and content hashing.

use std::fs;
use std::io::Write;
use std::path::Path;

use egoexo_tensor::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 5] = b"E2EV1";

/// Layout: magic, rank (u32 LE), dims (u32 LE each), f32 LE data.
pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |m: &str| Error::format(path, m);
    if bytes.len() < 9 || &bytes[..5] != TENSOR_MAGIC {
        return Err(bad("missing E2EV1 header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let rank = u32_at(5);
    let data_start = 9 + 4 * rank;
    if rank == 0 || bytes.len() < data_start {
        return Err(bad("truncated dimensions"));
    }
    let shape: Vec<usize> = (0..rank).map(|i| u32_at(9 + 4 * i)).collect();
    let numel: usize = shape.iter().product();
    if bytes.len() != data_start + 4 * numel {
        return Err(bad("data length does not match dimensions"));
    }
    let data = bytes[data_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_bytes(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of a value's canonical JSON serialization.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    sha256_hex(serde_json::to_string(&v).expect("serializable").as_bytes())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Creates `path` as an output directory. An existing non-empty directory is
/// refused unless `overwrite` is set, in which case it is cleared.
pub fn prepare_output_dir(path: &Path, overwrite: bool) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(Error::io(
                parent,
                std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
            ));
        }
    }
    if path.exists() {
        let non_empty = fs::read_dir(path).map_err(|e| Error::io(path, e))?.next().is_some();
        if non_empty {
            if !overwrite {
                return Err(Error::Config(format!(
                    "output directory {} is not empty (pass overwrite to replace it)",
                    path.display()
                )));
            }
            fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
        }
    }
    ensure_dir(path)
}
