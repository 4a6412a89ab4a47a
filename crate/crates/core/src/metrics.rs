//! Frame-level confusion metrics, boundary errors and summary tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::{decode_mask_to_events, DEFAULT_THRESHOLD};
use crate::types::{Confusion, EvalRecord, Events, FrameMask, KinematicLabel, LABEL_FPS};

/// Inter-rater agreement of human frame labelling, for reporting only.
pub const HUMAN_TOLERANCE_FRAMES: f64 = 2.48;
/// Boundary-error thresholds (frames) reported in summaries.
pub const TOLERANCE_THRESHOLDS: [i64; 2] = [3, 4];

/// Counts over the valid frames. Values at or above 0.5 are positive.
pub fn confusion(pred: &FrameMask, truth: &FrameMask) -> Result<Confusion> {
    if pred.n_frames != truth.n_frames {
        return Err(Error::Size(format!(
            "prediction has {} frames, truth has {}",
            pred.n_frames, truth.n_frames
        )));
    }
    if pred.values.len() < truth.n_frames || truth.values.len() < truth.n_frames {
        return Err(Error::Size("mask shorter than its frame count".into()));
    }
    let mut c = Confusion::default();
    for i in 0..truth.n_frames {
        let p = pred.values[i] >= DEFAULT_THRESHOLD;
        let t = truth.values[i] >= DEFAULT_THRESHOLD;
        match (p, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Rates with undefined denominators left as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &Confusion) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.fp + c.tn),
    }
}

/// Predicted minus true frame, for opening and closure. Positive is late.
pub fn boundary_errors(pred: &Events, truth: &Events) -> (i64, i64) {
    (
        pred.opening_frame as i64 - truth.opening_frame as i64,
        pred.closure_frame as i64 - truth.closure_frame as i64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRow {
    pub threshold_frames: i64,
    pub percent: f64,
}

/// Percentage of entries with |error| below each threshold. Missing
/// detections (`None`) count as failures.
pub fn tolerance_summary(errors: &[Option<i64>], thresholds: &[i64]) -> Vec<ToleranceRow> {
    thresholds
        .iter()
        .map(|&th| {
            let hits = errors.iter().filter(|e| e.is_some_and(|e| e.abs() < th)).count();
            ToleranceRow {
                threshold_frames: th,
                percent: if errors.is_empty() { 0.0 } else { 100.0 * hits as f64 / errors.len() as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

/// Order statistics of the defined values; `None` if there are none.
pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    Some(Summary {
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        count: v.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub accuracy: Option<Summary>,
    pub sensitivity: Option<Summary>,
    pub specificity: Option<Summary>,
}

/// Min, mean and max of each per-swallow metric.
pub fn fold_report(records: &[EvalRecord]) -> FoldReport {
    let m: Vec<Metrics> = records.iter().map(|r| metrics(&r.confusion)).collect();
    FoldReport {
        accuracy: summarize(m.iter().map(|x| x.accuracy)),
        sensitivity: summarize(m.iter().map(|x| x.sensitivity)),
        specificity: summarize(m.iter().map(|x| x.specificity)),
    }
}

/// Scores one predicted mask against its label.
pub fn evaluate_swallow(pred: &FrameMask, truth: &KinematicLabel, threshold: f64) -> Result<EvalRecord> {
    let truth_mask = crate::framing::label_to_mask(truth)?;
    let binary = pred.binarized(threshold);
    let conf = confusion(&binary, &truth_mask)?;
    let errors = match decode_mask_to_events(pred, threshold) {
        Ok(ev) => Some(boundary_errors(&ev, &truth.events())),
        Err(Error::NoOpeningDetected { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalRecord {
        swallow_id: truth.swallow_id.clone(),
        confusion: conf,
        opening_error_frames: errors.map(|e| e.0),
        closure_error_frames: errors.map(|e| e.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_swallows: usize,
    pub summary: FoldReport,
    pub opening_tolerance: Vec<ToleranceRow>,
    pub closure_tolerance: Vec<ToleranceRow>,
    pub mean_opening_error_ms: Option<f64>,
    pub mean_closure_error_ms: Option<f64>,
    /// Swallows where no open run was found.
    pub no_opening_detected: Vec<String>,
    pub human_tolerance_frames: f64,
    pub per_swallow: Vec<EvalRecord>,
}

pub fn eval_report(records: Vec<EvalRecord>) -> EvalReport {
    let opening: Vec<Option<i64>> = records.iter().map(|r| r.opening_error_frames).collect();
    let closure: Vec<Option<i64>> = records.iter().map(|r| r.closure_error_frames).collect();
    let ms = |e: &[Option<i64>]| {
        summarize(e.iter().map(|v| v.map(|f| f as f64 * 1000.0 / f64::from(LABEL_FPS)))).map(|s| s.mean)
    };
    EvalReport {
        n_swallows: records.len(),
        summary: fold_report(&records),
        opening_tolerance: tolerance_summary(&opening, &TOLERANCE_THRESHOLDS),
        closure_tolerance: tolerance_summary(&closure, &TOLERANCE_THRESHOLDS),
        mean_opening_error_ms: ms(&opening),
        mean_closure_error_ms: ms(&closure),
        no_opening_detected: records
            .iter()
            .filter(|r| r.opening_error_frames.is_none())
            .map(|r| r.swallow_id.clone())
            .collect(),
        human_tolerance_frames: HUMAN_TOLERANCE_FRAMES,
        per_swallow: records,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn cell_i(v: Option<i64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes a header and rows as RFC 4180 CSV.
fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing into a Vec cannot fail
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv of utf-8 fields")
}

impl EvalReport {
    /// Headline table: one metric per row.
    pub fn summary_csv(&self) -> String {
        let mean = |x: &Option<Summary>| cell(x.map(|v| v.mean));
        let mut rows = vec![
            vec!["average_accuracy".to_string(), mean(&self.summary.accuracy)],
            vec!["average_sensitivity".to_string(), mean(&self.summary.sensitivity)],
            vec!["average_specificity".to_string(), mean(&self.summary.specificity)],
        ];
        for (name, table) in [("opening", &self.opening_tolerance), ("closure", &self.closure_tolerance)] {
            for r in table {
                rows.push(vec![format!("pct_{name}_error_lt_{}_frames", r.threshold_frames), format!("{:.6}", r.percent)]);
            }
        }
        rows.push(vec!["no_opening_detected".to_string(), self.no_opening_detected.len().to_string()]);
        to_csv(&["metric", "value"], rows)
    }

    pub fn per_swallow_csv(&self) -> String {
        let header = [
            "swallow_id", "tp", "tn", "fp", "fn", "accuracy", "sensitivity", "specificity",
            "opening_error_frames", "closure_error_frames",
        ];
        let rows = self.per_swallow.iter().map(|r| {
            let m = metrics(&r.confusion);
            let c = r.confusion;
            vec![
                r.swallow_id.clone(),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                cell(m.accuracy),
                cell(m.sensitivity),
                cell(m.specificity),
                cell_i(r.opening_error_frames),
                cell_i(r.closure_error_frames),
            ]
        });
        to_csv(&header, rows)
    }

    /// Counts of boundary errors per signed frame offset.
    pub fn histogram_csv(&self) -> String {
        let open: Vec<i64> = self.per_swallow.iter().filter_map(|r| r.opening_error_frames).collect();
        let close: Vec<i64> = self.per_swallow.iter().filter_map(|r| r.closure_error_frames).collect();
        let all = open.iter().chain(&close);
        let range = match (all.clone().min(), all.max()) {
            (Some(&lo), Some(&hi)) => lo..=hi,
            _ => 1..=0,
        };
        let count = |v: &[i64], e: i64| v.iter().filter(|&&x| x == e).count().to_string();
        let rows = range.map(|e| vec![e.to_string(), count(&open, e), count(&close, e)]);
        to_csv(&["error_frames", "opening_count", "closure_count"], rows)
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "swallows: {}", self.n_swallows);
        for (name, v) in [
            ("accuracy", &self.summary.accuracy),
            ("sensitivity", &self.summary.sensitivity),
            ("specificity", &self.summary.specificity),
        ] {
            match v {
                Some(x) => {
                    let _ = writeln!(s, "{name:<12} mean {:.4}  min {:.4}  max {:.4}  (n={})", x.mean, x.min, x.max, x.count);
                }
                None => {
                    let _ = writeln!(s, "{name:<12} undefined");
                }
            }
        }
        for (name, rows) in [("opening", &self.opening_tolerance), ("closure", &self.closure_tolerance)] {
            for r in rows {
                let _ = writeln!(s, "{name} error < {} frames: {:.1}%", r.threshold_frames, r.percent);
            }
        }
        if let Some(v) = self.mean_opening_error_ms {
            let _ = writeln!(s, "mean opening error: {v:+.1} ms");
        }
        if let Some(v) = self.mean_closure_error_ms {
            let _ = writeln!(s, "mean closure error: {v:+.1} ms");
        }
        let _ = writeln!(s, "no opening detected: {}", self.no_opening_detected.len());
        let _ = writeln!(s, "human labelling tolerance: +/-{} frames", self.human_tolerance_frames);
        s
    }
}
