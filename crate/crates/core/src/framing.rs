//! Signal chunking and mask/event conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{pad_mask, Events, FrameMask, KinematicLabel, SwallowRecord, MAX_FRAMES};

/// Samples per video frame at 4 kHz.
pub const DEFAULT_CHUNK_LEN: usize = 66;
/// Default binarization threshold for network output.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-frame signal chunks padded to [`MAX_FRAMES`] steps.
///
/// `chunks[t]` is a row-major `chunk_len x 3` block (sample-major, axes
/// interleaved).
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSequence {
    pub chunks: Vec<Vec<f64>>,
    pub validity: Vec<bool>,
    pub n_frames: usize,
    pub chunk_len: usize,
}

impl ChunkSequence {
    pub fn validity_weights(&self) -> Vec<f64> {
        self.validity
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Frame count to use when no label is available.
pub fn inferred_frame_count(n_samples: usize, chunk_len: usize) -> usize {
    n_samples.div_ceil(chunk_len).clamp(1, MAX_FRAMES)
}

/// Splits a preprocessed record into `n_frames` chunks of `chunk_len` samples.
pub fn chunk_swallow(rec: &SwallowRecord, n_frames: usize, chunk_len: usize) -> Result<ChunkSequence> {
    if n_frames == 0 || n_frames > MAX_FRAMES {
        return Err(Error::Size(format!(
            "n_frames {n_frames} outside 1..={MAX_FRAMES}"
        )));
    }
    if chunk_len == 0 {
        return Err(Error::Config("chunk length must be positive".into()));
    }
    let len = rec.len();
    let chunks = (0..MAX_FRAMES)
        .map(|t| {
            let mut chunk = vec![0.0; chunk_len * 3];
            if t < n_frames {
                for s in 0..chunk_len {
                    let i = t * chunk_len + s;
                    if i >= len {
                        break;
                    }
                    for c in 0..3 {
                        chunk[s * 3 + c] = rec.channels[c][i] as f64;
                    }
                }
            }
            chunk
        })
        .collect();
    Ok(ChunkSequence {
        chunks,
        validity: (0..MAX_FRAMES).map(|t| t < n_frames).collect(),
        n_frames,
        chunk_len,
    })
}

/// Reference mask: ones over `opening_frame..closure_frame`.
pub fn label_to_mask(lab: &KinematicLabel) -> Result<FrameMask> {
    let values: Vec<f64> = (0..lab.n_frames)
        .map(|i| {
            if (lab.opening_frame..lab.closure_frame).contains(&i) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    pad_mask(&values)
}

/// Longest run of frames at or above `threshold`; ties go to the earliest run.
pub fn decode_mask_to_events(mask: &FrameMask, threshold: f64) -> Result<Events> {
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    let n = mask.n_frames.min(mask.values.len());
    for i in 0..=n {
        let on = i < n && mask.validity[i] && mask.values[i] >= threshold;
        match (on, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| i - s > be - bs) {
                    best = Some((s, i));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    best.map(|(opening_frame, closure_frame)| Events {
        opening_frame,
        closure_frame,
    })
    .ok_or(Error::NoOpeningDetected { threshold })
}

/// Predicted probabilities plus decoded events for one swallow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub swallow_id: String,
    pub mask: FrameMask,
    pub events: Option<Events>,
}
