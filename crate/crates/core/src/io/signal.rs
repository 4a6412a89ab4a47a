//! `.sig` files: a 20-byte header followed by interleaved f32 samples.
//!
//! | bytes | field |
//! |---|---|
//! | 0..4 | magic `HRCA` |
//! | 4..6 | version (u16) |
//! | 6..10 | sample rate in Hz (u32) |
//! | 10 | channel count, always 3 (u8) |
//! | 11..19 | samples per channel (u64) |
//! | 19 | stage: 0 raw, 1 preprocessed (u8) |
//!
//! All integers and samples are little-endian; samples are ordered
//! S-I, A-P, M-L within each time step.

use std::path::Path;

use super::{atomic_write, read_bytes, Reader};
use crate::error::{Error, Result};
use crate::types::{Stage, SwallowRecord};

pub const SIGNAL_MAGIC: &[u8; 4] = b"HRCA";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

fn stage_code(s: Stage) -> u8 {
    match s {
        Stage::Raw20k => 0,
        Stage::Preprocessed4k => 1,
    }
}

pub fn encode_signal(rec: &SwallowRecord) -> Vec<u8> {
    let n = rec.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 12);
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rec.sample_rate_hz as u32).to_le_bytes());
    out.push(3);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.push(stage_code(rec.stage));
    for i in 0..n {
        for ch in &rec.channels {
            out.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    out
}

pub fn decode_signal(bytes: &[u8], id: &str) -> Result<SwallowRecord> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>("magic")?;
    if &magic != SIGNAL_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected HRCA")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let rate = r.u32("sample rate")?;
    let channels = r.u8("channel count")?;
    if channels != 3 {
        return Err(Error::format(10, format!("{channels} channels, expected 3")));
    }
    let count = r.u64("sample count")?;
    let stage = match r.u8("stage")? {
        0 => Stage::Raw20k,
        1 => Stage::Preprocessed4k,
        other => return Err(Error::format(19, format!("unknown stage flag {other}"))),
    };
    if f64::from(rate) != stage.sample_rate_hz() {
        return Err(Error::format(6, format!("sample rate {rate} Hz does not match stage {stage:?}")));
    }
    let payload = count
        .checked_mul(12)
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::format(11, format!("sample count {count} too large")))?;
    if r.remaining() < payload {
        return Err(Error::format(
            (HEADER_LEN + r.remaining() / 12 * 12) as u64,
            format!("truncated payload: header declares {count} samples, {} bytes present", r.remaining()),
        ));
    }
    if r.remaining() > payload {
        return Err(Error::format((HEADER_LEN + payload) as u64, "trailing bytes after payload"));
    }
    let n = count as usize;
    let mut ch: [Vec<f32>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    for (k, w) in r.take(payload, "payload")?.chunks_exact(4).enumerate() {
        ch[k % 3].push(f32::from_le_bytes(w.try_into().expect("4 bytes")));
    }
    SwallowRecord::new(id, ch, stage)
}

/// The record id is the file stem.
pub fn read_signal(path: &Path) -> Result<SwallowRecord> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_signal(&read_bytes(path)?, &id)
}

pub fn write_signal(path: &Path, rec: &SwallowRecord) -> Result<()> {
    atomic_write(path, &encode_signal(rec))
}
