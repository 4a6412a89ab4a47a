//! Checkpoint container.
//!
//! Layout: magic `HRCK`, version (u16), manifest length (u64), a JSON
//! manifest, then every tensor as little-endian f64 values. Tensor offsets
//! in the manifest are in bytes from the start of the blob section. The
//! file ends with a SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{atomic_write, json_error, read_bytes, Reader};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, ModelParams, Network, TrainingMeta};
use crate::nn::{AdamHyper, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HRCK";
const VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerEntry {
    step: u64,
    hyper: AdamHyper,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    fingerprint: String,
    dtype: String,
    config: ModelConfig,
    meta: TrainingMeta,
    optimizer: Option<OptimizerEntry>,
    tensors: Vec<TensorEntry>,
}

fn named_blobs(ckpt: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut out = ckpt.network.params.named();
    if let Some(opt) = &ckpt.optimizer {
        let names: Vec<String> = out.iter().map(|(n, _)| n.clone()).collect();
        for (n, t) in names.iter().zip(&opt.m) {
            out.push((format!("adam.m.{n}"), t));
        }
        for (n, t) in names.iter().zip(&opt.v) {
            out.push((format!("adam.v.{n}"), t));
        }
    }
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.network.params.check_shapes(&ckpt.network.config)?;
    let blobs = named_blobs(ckpt);
    let mut offset = 0u64;
    let tensors = blobs
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += t.len() as u64 * 8;
            e
        })
        .collect();
    let manifest = Manifest {
        fingerprint: ckpt.fingerprint(),
        dtype: "f64".into(),
        config: ckpt.network.config.clone(),
        meta: ckpt.meta.clone(),
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimizerEntry { step: o.step, hyper: o.hyper }),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Numerical(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(14 + json.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &blobs {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected HRCK")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    if bytes.len() < 14 + DIGEST_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated checkpoint header"));
    }
    let body_len = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_len])[..] != bytes[body_len..] {
        return Err(Error::format(body_len as u64, "checksum mismatch: file is truncated or corrupted"));
    }
    let bytes = &bytes[..body_len];
    let mut r = Reader::new(bytes);
    r.pos = 6;
    let len = r.u64("manifest length")?;
    let start = r.pos as u64;
    let json = r.take(usize::try_from(len).unwrap_or(usize::MAX), "manifest")?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| match json_error(json, &e) {
        Error::Format { offset, message } => Error::format(start + offset, message),
        other => other,
    })?;
    let blob_start = r.pos;
    let blob = &bytes[blob_start..];
    let at = |off: u64| blob_start as u64 + off;

    if manifest.dtype != "f64" {
        return Err(Error::format(start, format!("unsupported dtype {:?}", manifest.dtype)));
    }
    manifest.config.validate().map_err(|e| Error::format(start, e.to_string()))?;
    if manifest.fingerprint != manifest.config.fingerprint() {
        return Err(Error::format(start, "config fingerprint mismatch"));
    }

    let mut params = ModelParams::zeros(&manifest.config);
    let mut expected: Vec<(String, Vec<usize>)> = params.named().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    if manifest.optimizer.is_some() {
        let base = expected.clone();
        for prefix in ["adam.m.", "adam.v."] {
            expected.extend(base.iter().map(|(n, s)| (format!("{prefix}{n}"), s.clone())));
        }
    }
    if manifest.tensors.len() != expected.len() {
        return Err(Error::format(
            start,
            format!("{} tensors in manifest, config needs {}", manifest.tensors.len(), expected.len()),
        ));
    }

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    let mut end = 0u64;
    for (entry, (name, shape)) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name {
            return Err(Error::format(at(entry.offset), format!("expected tensor {name}, found {}", entry.name)));
        }
        if &entry.shape != shape {
            return Err(Error::format(
                at(entry.offset),
                format!("tensor {name} has shape {:?}, config needs {shape:?}", entry.shape),
            ));
        }
        if entry.offset != end {
            return Err(Error::format(at(entry.offset), format!("tensor {name} is not contiguous")));
        }
        let n: usize = shape.iter().product();
        let stop = entry.offset + n as u64 * 8;
        if stop > blob.len() as u64 {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated tensor {name}: needs bytes up to {}", at(stop)),
            ));
        }
        let raw = &blob[entry.offset as usize..stop as usize];
        values.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
        end = stop;
    }
    if end != blob.len() as u64 {
        return Err(Error::format(at(end), "trailing bytes after tensors"));
    }

    let mut values = values.into_iter();
    for t in params.tensors_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::from_vec(&shape, values.next().expect("counted"))?;
    }
    let optimizer = manifest.optimizer.map(|o| {
        let mut state = AdamState::new(params.tensors(), o.hyper);
        state.step = o.step;
        for t in state.m.iter_mut().chain(state.v.iter_mut()) {
            t.data_mut().copy_from_slice(&values.next().expect("counted"));
        }
        state
    });
    let network = Network::from_params(manifest.config, params).map_err(|e| Error::format(start, e.to_string()))?;
    Ok(Checkpoint { network, optimizer, meta: manifest.meta })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &encode_checkpoint(ckpt)?)
}
