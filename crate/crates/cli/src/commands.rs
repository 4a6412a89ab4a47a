use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dueso::dsp::{fit_baseline_models, preprocess_pipeline, ArModel, PreprocessConfig};
use dueso::framing::{decode_mask_to_events, DEFAULT_THRESHOLD};
use dueso::io::{
    label_path, read_checkpoint, read_dataset, read_json, read_label, read_signal, write_checkpoint, write_dataset,
    write_json, DatasetManifest, PredictionFile,
};
use dueso::metrics::{eval_report, evaluate_swallow, EvalReport};
use dueso::model::{predict as predict_one, predict_mask, Checkpoint, TrainingMeta};
use dueso::synth::generate_dataset;
use dueso::train::{cross_validate, prepare_samples, EpochRecord};
use dueso::{Error, KinematicLabel, Prediction, Stage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{EvalArgs, GradcheckArgs, PredictArgs, PreprocessArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Gradcheck(String),
}

impl Failure {
    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.kind(),
            Failure::Gradcheck(_) => "GradcheckFailed",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Gradcheck(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<Value, Failure>;

/// Written next to a preprocessed dataset so later stages can handle raw
/// input the same way.
#[derive(Debug, Serialize, Deserialize)]
struct PreprocessingRecord {
    preprocess: PreprocessConfig,
    ar_models: Vec<ArModel>,
}

const PREPROCESSING_FILE: &str = "preprocessing.json";

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.synth.n_swallows = n;
    }
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    if a.snr.is_some() {
        cfg.synth.event_snr_db = a.snr;
    }
    if a.noise_free {
        cfg.synth.event_snr_db = None;
    }
    cfg.log("synth");
    let ds = generate_dataset(&cfg.synth)?;
    let entries: Vec<_> = ds.swallows.into_iter().map(|s| (s.record, s.label)).collect();
    write_dataset(&a.out, &entries, Some(&ds.baseline), Some(&cfg.synth))?;
    Ok(json!({ "command": "synth", "swallows": entries.len(), "seed": cfg.synth.seed }))
}

pub fn preprocess(a: PreprocessArgs) -> CmdResult {
    let cfg = RunConfig::load(a.config.as_deref())?;
    cfg.log("preprocess");
    let ds = read_dataset(&a.input)?;
    let baseline = ds
        .baseline
        .as_ref()
        .ok_or_else(|| Error::Config("dataset has no baseline recording to fit device-noise models".into()))?;
    let models = fit_baseline_models(baseline, &cfg.preprocess)?;
    let mut out = Vec::with_capacity(ds.entries.len());
    let mut guarded = Vec::new();
    for (rec, lab) in &ds.entries {
        let p = preprocess_pipeline(rec, &models, &cfg.preprocess)?;
        if p.variance_guard.iter().any(|&g| g) {
            log::warn!("{}: near-zero variance on some axis, left unscaled", rec.id);
            guarded.push(rec.id.clone());
        }
        out.push((p.record, lab.clone()));
    }
    write_dataset(&a.out, &out, None, ds.manifest.generator.as_ref())?;
    write_json(
        &a.out.join(PREPROCESSING_FILE),
        &PreprocessingRecord { preprocess: cfg.preprocess.clone(), ar_models: models.to_vec() },
    )?;
    Ok(json!({ "command": "preprocess", "swallows": out.len(), "variance_guarded": guarded }))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a RunConfig,
    cross_validation: &'a dueso::train::CvReport,
    history: Vec<&'a [EpochRecord]>,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(k) = a.folds {
        cfg.train.folds = k;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs_max = e;
    }
    cfg.train.validate()?;
    cfg.model.validate()?;
    cfg.log("train");

    let ds = read_dataset(&a.data)?;
    let mut meta = TrainingMeta::default();
    let models = if ds.entries.iter().any(|(r, _)| r.stage == Stage::Raw20k) {
        let baseline = ds
            .baseline
            .as_ref()
            .ok_or_else(|| Error::Config("raw dataset has no baseline recording".into()))?;
        let m = fit_baseline_models(baseline, &cfg.preprocess)?;
        meta.preprocess = Some(cfg.preprocess.clone());
        meta.ar_models = Some(m.to_vec());
        Some(m)
    } else {
        let p = a.data.join(PREPROCESSING_FILE);
        if p.is_file() {
            let rec: PreprocessingRecord = read_json(&p)?;
            meta.preprocess = Some(rec.preprocess);
            meta.ar_models = Some(rec.ar_models);
        }
        None
    };
    let samples = prepare_samples(&ds.entries, models.as_ref(), &cfg.preprocess, cfg.model.chunk_len)?;
    let cv = cross_validate(&samples, &cfg.model, &cfg.train, &meta)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    let mut checkpoints = Vec::new();
    for f in &cv.folds {
        let path = a.out.join(format!("fold{:02}.ckpt", f.fold));
        write_checkpoint(&path, &f.outcome.checkpoint)?;
        checkpoints.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let report = TrainReport {
        config: &cfg,
        cross_validation: &cv.report,
        history: cv.folds.iter().map(|f| f.outcome.history.as_slice()).collect(),
    };
    write_json(&a.out.join("report.json"), &report)?;
    write_eval_files(&a.out, &cv.report.overall)?;
    let predictions = PredictionFile { predictions: cv.folds.iter().flat_map(|f| f.predictions.iter().cloned()).collect() };
    write_json(&a.out.join("predictions.json"), &predictions)?;
    write_json(&a.out.join("config.json"), &cfg)?;

    let overall = &cv.report.overall;
    Ok(json!({
        "command": "train",
        "checkpoints": checkpoints,
        "accuracy_mean": overall.summary.accuracy.map(|s| s.mean),
        "sensitivity_mean": overall.summary.sensitivity.map(|s| s.mean),
        "specificity_mean": overall.summary.specificity.map(|s| s.mean),
    }))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    Ok(dueso::io::atomic_write(path, text.as_bytes())?)
}

fn write_eval_files(dir: &Path, report: &EvalReport) -> Result<(), Failure> {
    write_json(&dir.join("eval.json"), report)?;
    write_text(&dir.join("eval.txt"), &report.to_text())?;
    write_text(&dir.join("summary.csv"), &report.summary_csv())?;
    write_text(&dir.join("per_swallow.csv"), &report.per_swallow_csv())?;
    write_text(&dir.join("histogram.csv"), &report.histogram_csv())?;
    Ok(())
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let ckpt: Checkpoint = read_checkpoint(&a.checkpoint)?;
    log::info!(
        "predict: checkpoint {} (fold {:?}, seed {}), config {}",
        a.checkpoint.display(),
        ckpt.meta.fold,
        ckpt.meta.seed,
        serde_json::to_string(&ckpt.network.config).unwrap_or_default()
    );
    let predictions = if a.input.is_dir() {
        let ds = read_dataset(&a.input)?;
        let mut out = Vec::with_capacity(ds.entries.len());
        for (rec, lab) in &ds.entries {
            let mask = predict_mask(rec, Some(lab.n_frames), &ckpt)?;
            let events = decode_mask_to_events(&mask, DEFAULT_THRESHOLD).ok();
            if events.is_none() {
                log::warn!("{}: no opening detected", rec.id);
            }
            out.push(Prediction { swallow_id: rec.id.clone(), mask, events });
        }
        out
    } else {
        let rec = read_signal(&a.input)?;
        vec![predict_one(&rec, None, &ckpt)?]
    };
    let missing: Vec<&str> = predictions.iter().filter(|p| p.events.is_none()).map(|p| p.swallow_id.as_str()).collect();
    let summary = json!({ "command": "predict", "predictions": predictions.len(), "no_opening_detected": missing });
    write_json(&a.out, &PredictionFile { predictions })?;
    Ok(summary)
}

fn load_truth(path: &Path) -> Result<Vec<KinematicLabel>, Failure> {
    let manifest = path.join("manifest.json");
    if manifest.is_file() {
        let m: DatasetManifest = read_json(&manifest)?;
        return Ok(m.swallows.iter().map(|id| read_label(&label_path(path, id))).collect::<Result<_, _>>()?);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files.iter().map(|p| read_label(p)).collect::<Result<_, _>>()?)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let preds: PredictionFile = read_json(&a.pred)?;
    let truth = load_truth(&a.truth)?;
    let mut records = Vec::with_capacity(preds.predictions.len());
    for p in &preds.predictions {
        let lab = truth
            .iter()
            .find(|l| l.swallow_id == p.swallow_id)
            .ok_or_else(|| Error::Validation(format!("no label for predicted swallow {:?}", p.swallow_id)))?;
        records.push(evaluate_swallow(&p.mask, lab, DEFAULT_THRESHOLD)?);
    }
    let unmatched = truth.iter().filter(|l| !preds.predictions.iter().any(|p| p.swallow_id == l.swallow_id)).count();
    if unmatched > 0 {
        log::warn!("{unmatched} labels have no prediction");
    }
    let report = eval_report(records);
    write_eval_files(&a.report, &report)?;
    Ok(json!({
        "command": "eval",
        "swallows": report.n_swallows,
        "accuracy_mean": report.summary.accuracy.map(|s| s.mean),
        "sensitivity_mean": report.summary.sensitivity.map(|s| s.mean),
        "specificity_mean": report.summary.specificity.map(|s| s.mean),
    }))
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.gradcheck.seed = s;
    }
    if let Some(n) = a.samples {
        cfg.gradcheck.samples_per_layer = n;
    }
    if a.corrupt.is_some() {
        cfg.gradcheck.corrupt_layer = a.corrupt;
    }
    cfg.model.validate()?;
    cfg.log("gradcheck");
    let report = dueso::gradcheck::gradcheck(&cfg.model, &cfg.gradcheck)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    for l in &report.layers {
        log::info!("{}: {} checked, max relative error {:.3e}", l.layer, l.checked, l.max_relative_error);
    }
    if !report.passed() {
        let bad: Vec<&str> = report.layers.iter().filter(|l| !l.passed).map(|l| l.layer.as_str()).collect();
        return Err(Failure::Gradcheck(format!(
            "gradient check failed for {}; worst relative error {:.3e} (tolerance {:.1e})",
            bad.join(", "),
            report.worst(),
            cfg.gradcheck.tolerance
        )));
    }
    Ok(json!({ "command": "gradcheck", "passed": true, "worst_relative_error": report.worst() }))
}
