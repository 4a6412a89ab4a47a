//! Dataset directories:
//!
//! ```text
//! root/
//!   manifest.json
//!   baseline.sig        (optional device-noise recording)
//!   signals/<id>.sig
//!   labels/<id>.json
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, read_label, read_signal, write_json, write_label, write_signal};
use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::types::{validate_record, KinematicLabel, SwallowRecord};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub swallows: Vec<String>,
    /// Path of the baseline recording, relative to the root.
    pub baseline: Option<String>,
    /// Generator settings for synthetic corpora.
    pub generator: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub entries: Vec<(SwallowRecord, KinematicLabel)>,
    pub baseline: Option<SwallowRecord>,
}

pub fn signal_path(root: &Path, id: &str) -> PathBuf {
    root.join("signals").join(format!("{id}.sig"))
}

pub fn label_path(root: &Path, id: &str) -> PathBuf {
    root.join("labels").join(format!("{id}.json"))
}

fn check_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::Validation(format!("invalid swallow id {id:?}")));
        }
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate swallow id {id:?}")));
        }
    }
    Ok(())
}

/// Writes every file, then the manifest.
pub fn write_dataset(
    root: &Path,
    entries: &[(SwallowRecord, KinematicLabel)],
    baseline: Option<&SwallowRecord>,
    generator: Option<&SynthConfig>,
) -> Result<DatasetManifest> {
    check_ids(entries.iter().map(|(r, _)| r.id.as_str()))?;
    for (rec, lab) in entries {
        let report = validate_record(rec, lab);
        if !report.passed() {
            return Err(Error::Validation(format!("{}: {}", rec.id, report.violations.join("; "))));
        }
        write_signal(&signal_path(root, &rec.id), rec)?;
        write_label(&label_path(root, &rec.id), lab)?;
    }
    if let Some(b) = baseline {
        write_signal(&root.join("baseline.sig"), b)?;
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        swallows: entries.iter().map(|(r, _)| r.id.clone()).collect(),
        baseline: baseline.map(|_| "baseline.sig".to_string()),
        generator: generator.cloned(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&root.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(0, format!("unsupported dataset version {}", manifest.format_version)));
    }
    check_ids(manifest.swallows.iter().map(String::as_str))?;
    let mut entries = Vec::with_capacity(manifest.swallows.len());
    for id in &manifest.swallows {
        let (sp, lp) = (signal_path(root, id), label_path(root, id));
        for p in [&sp, &lp] {
            if !p.is_file() {
                return Err(Error::Validation(format!("manifest entry {id:?} has no file {}", p.display())));
            }
        }
        let rec = read_signal(&sp)?;
        let lab = read_label(&lp)?;
        let report = validate_record(&rec, &lab);
        if !report.passed() {
            return Err(Error::Validation(format!("{id}: {}", report.violations.join("; "))));
        }
        entries.push((rec, lab));
    }
    let baseline = manifest.baseline.as_ref().map(|b| read_signal(&root.join(b))).transpose()?;
    Ok(Dataset { manifest, entries, baseline })
}
