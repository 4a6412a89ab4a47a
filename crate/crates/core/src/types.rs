//! Domain values shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest swallow the network handles, in video frames.
pub const MAX_FRAMES: usize = 90;
/// Videofluoroscopy frame rate of the kinematic labels.
pub const LABEL_FPS: u32 = 30;
pub const RAW_RATE_HZ: f64 = 20_000.0;
pub const PREPROCESSED_RATE_HZ: f64 = 4_000.0;

/// Accelerometer axes, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Superior-inferior.
    SI,
    /// Anterior-posterior.
    AP,
    /// Medial-lateral.
    ML,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::SI, Axis::AP, Axis::ML];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw20k,
    Preprocessed4k,
}

impl Stage {
    pub fn sample_rate_hz(self) -> f64 {
        match self {
            Stage::Raw20k => RAW_RATE_HZ,
            Stage::Preprocessed4k => PREPROCESSED_RATE_HZ,
        }
    }
}

/// One swallow segment of tri-axial acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct SwallowRecord {
    pub id: String,
    /// S-I, A-P and M-L channels.
    pub channels: [Vec<f32>; 3],
    pub sample_rate_hz: f64,
    pub stage: Stage,
}

impl SwallowRecord {
    /// Builds a record and rejects anything that breaks the record invariants.
    pub fn new(id: impl Into<String>, channels: [Vec<f32>; 3], stage: Stage) -> Result<Self> {
        let rec = SwallowRecord {
            id: id.into(),
            channels,
            sample_rate_hz: stage.sample_rate_hz(),
            stage,
        };
        let problems = record_violations(&rec);
        if problems.is_empty() {
            Ok(rec)
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, axis: Axis) -> &[f32] {
        &self.channels[axis as usize]
    }
}

/// Ground truth for one swallow: onset-relative, 0-based frame indices.
///
/// `closure_frame` is the first frame at which the sphincter is closed again,
/// so the open run is `opening_frame..closure_frame`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KinematicLabel {
    pub swallow_id: String,
    pub n_frames: usize,
    pub opening_frame: usize,
    pub closure_frame: usize,
    pub fps: u32,
}

impl KinematicLabel {
    pub fn new(
        swallow_id: impl Into<String>,
        n_frames: usize,
        opening_frame: usize,
        closure_frame: usize,
    ) -> Result<Self> {
        let lab = KinematicLabel {
            swallow_id: swallow_id.into(),
            n_frames,
            opening_frame,
            closure_frame,
            fps: LABEL_FPS,
        };
        let problems = label_violations(&lab);
        if problems.is_empty() {
            Ok(lab)
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn events(&self) -> Events {
        Events {
            opening_frame: self.opening_frame,
            closure_frame: self.closure_frame,
        }
    }

    pub fn open_frames(&self) -> usize {
        self.closure_frame - self.opening_frame
    }
}

/// An (opening, closure) frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Events {
    pub opening_frame: usize,
    pub closure_frame: usize,
}

/// A per-frame open/closed vector padded to [`MAX_FRAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMask {
    pub values: Vec<f64>,
    pub validity: Vec<bool>,
    pub n_frames: usize,
}

impl FrameMask {
    /// Validity mask as 0/1 reals, the form the loss consumes.
    pub fn validity_weights(&self) -> Vec<f64> {
        self.validity
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect()
    }

    /// Thresholds the valid region; padding stays 0.
    pub fn binarized(&self, threshold: f64) -> FrameMask {
        let values = self
            .values
            .iter()
            .zip(&self.validity)
            .map(|(&v, &ok)| if ok && v >= threshold { 1.0 } else { 0.0 })
            .collect();
        FrameMask {
            values,
            validity: self.validity.clone(),
            n_frames: self.n_frames,
        }
    }

    pub fn valid_values(&self) -> &[f64] {
        &self.values[..self.n_frames]
    }
}

/// Copies `values` into a zero-padded [`FrameMask`].
pub fn pad_mask(values: &[f64]) -> Result<FrameMask> {
    let t = values.len();
    if t == 0 || t > MAX_FRAMES {
        return Err(Error::Size(format!(
            "mask length {t} outside 1..={MAX_FRAMES}"
        )));
    }
    let mut padded = vec![0.0; MAX_FRAMES];
    padded[..t].copy_from_slice(values);
    let validity = (0..MAX_FRAMES).map(|i| i < t).collect();
    Ok(FrameMask {
        values: padded,
        validity,
        n_frames: t,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Per-swallow evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub swallow_id: String,
    pub confusion: Confusion,
    /// Predicted minus true opening frame; `None` when nothing was detected.
    pub opening_error_frames: Option<i64>,
    pub closure_error_frames: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn record_violations(rec: &SwallowRecord) -> Vec<String> {
    let mut out = Vec::new();
    let n = rec.channels[0].len();
    if n == 0 {
        out.push("empty channels".to_string());
    }
    if rec.channels.iter().any(|c| c.len() != n) {
        out.push("channel lengths differ".to_string());
    }
    if (rec.sample_rate_hz - rec.stage.sample_rate_hz()).abs() > 0.0 {
        out.push(format!(
            "sample rate {} Hz inconsistent with stage {:?}",
            rec.sample_rate_hz, rec.stage
        ));
    }
    for (axis, ch) in Axis::ALL.iter().zip(&rec.channels) {
        if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
            out.push(format!("non-finite sample at {axis:?}[{i}]"));
        }
    }
    out
}

fn label_violations(lab: &KinematicLabel) -> Vec<String> {
    let mut out = Vec::new();
    if lab.n_frames == 0 {
        out.push("zero frames".to_string());
    }
    if lab.n_frames > MAX_FRAMES {
        out.push(format!(
            "n_frames {} exceeds {MAX_FRAMES}-frame limit",
            lab.n_frames
        ));
    }
    if lab.closure_frame <= lab.opening_frame {
        out.push("empty opening interval".to_string());
    }
    if lab.closure_frame > lab.n_frames {
        out.push(format!(
            "closure frame {} beyond n_frames {}",
            lab.closure_frame, lab.n_frames
        ));
    }
    if lab.fps != LABEL_FPS {
        out.push(format!("fps {} is not {LABEL_FPS}", lab.fps));
    }
    out
}

/// Checks a record and its label against every domain invariant.
pub fn validate_record(rec: &SwallowRecord, lab: &KinematicLabel) -> ValidationReport {
    let mut violations = record_violations(rec);
    violations.extend(label_violations(lab));
    if rec.id != lab.swallow_id {
        violations.push(format!(
            "label id {:?} does not match record id {:?}",
            lab.swallow_id, rec.id
        ));
    }
    ValidationReport { violations }
}
