//! Label files: one JSON object per swallow.

use std::path::Path;

use serde::Deserialize;

use super::{atomic_write, json_error, read_bytes};
use crate::error::{Error, Result};
use crate::types::{validate_record, KinematicLabel};

// Every field is required on disk.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelFile {
    swallow_id: String,
    n_frames: usize,
    opening_frame: usize,
    closure_frame: usize,
    fps: u32,
}

pub fn encode_label(lab: &KinematicLabel) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(lab).expect("label serializes");
    v.push(b'\n');
    v
}

/// Missing or malformed fields are format errors; well-formed but
/// inconsistent values are validation errors.
pub fn decode_label(bytes: &[u8]) -> Result<KinematicLabel> {
    let f: LabelFile = serde_json::from_slice(bytes).map_err(|e| json_error(bytes, &e))?;
    let lab = KinematicLabel {
        swallow_id: f.swallow_id,
        n_frames: f.n_frames,
        opening_frame: f.opening_frame,
        closure_frame: f.closure_frame,
        fps: f.fps,
    };
    let probe = crate::types::SwallowRecord {
        id: lab.swallow_id.clone(),
        channels: [vec![0.0], vec![0.0], vec![0.0]],
        sample_rate_hz: crate::types::PREPROCESSED_RATE_HZ,
        stage: crate::types::Stage::Preprocessed4k,
    };
    let report = validate_record(&probe, &lab);
    if !report.passed() {
        return Err(Error::Validation(format!("label {}: {}", lab.swallow_id, report.violations.join("; "))));
    }
    Ok(lab)
}

pub fn read_label(path: &Path) -> Result<KinematicLabel> {
    decode_label(&read_bytes(path)?)
}

pub fn write_label(path: &Path, lab: &KinematicLabel) -> Result<()> {
    atomic_write(path, &encode_label(lab))
}
