//! Mini-batch Adam training with early stopping, and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{preprocess_pipeline, ArModel, PreprocessConfig};
use crate::error::{Error, Result};
use crate::framing::{chunk_swallow, decode_mask_to_events, label_to_mask, ChunkSequence, Prediction};
use crate::metrics::{eval_report, evaluate_swallow, fold_report, EvalReport, FoldReport};
use crate::model::{Checkpoint, Mode, ModelConfig, ModelParams, Network, TrainingMeta};
use crate::nn::{adam_step, AdamHyper, AdamState};
use crate::types::{EvalRecord, FrameMask, KinematicLabel, Stage, SwallowRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub folds: usize,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without improvement before stopping.
    pub early_stop_patience: usize,
    /// Share of each training set held out for early stopping.
    pub val_fraction_within_train: f64,
    pub seed: u64,
    /// Stop once the dropout-free training loss falls below this (and the
    /// training frame accuracy reaches `stop_at_train_accuracy`, if set).
    pub stop_below_train_loss: Option<f64>,
    pub stop_at_train_accuracy: Option<f64>,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 10,
            epochs_max: 100,
            batch_size: 16,
            lr: 1e-3,
            early_stop_patience: 20,
            val_fraction_within_train: 0.1,
            seed: 0,
            stop_below_train_loss: None,
            stop_at_train_accuracy: None,
            threshold: crate::framing::DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("batch_size and early_stop_patience must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction_within_train) {
            return Err(Error::Config("val_fraction_within_train must be in [0, 1)".into()));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(Error::Config("threshold must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over a seed and two counters.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A swallow ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seq: ChunkSequence,
    pub target: FrameMask,
    pub label: KinematicLabel,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.label.swallow_id
    }
}

/// Preprocesses raw records (each on its own statistics) and chunks them.
pub fn prepare_samples(
    data: &[(SwallowRecord, KinematicLabel)],
    models: Option<&[ArModel; 3]>,
    preprocess: &PreprocessConfig,
    chunk_len: usize,
) -> Result<Vec<Sample>> {
    data.par_iter()
        .map(|(rec, lab)| {
            let report = crate::types::validate_record(rec, lab);
            if !report.passed() {
                return Err(Error::Validation(format!("{}: {}", rec.id, report.violations.join("; "))));
            }
            let pre;
            let rec = if rec.stage == Stage::Raw20k {
                let m = models.ok_or_else(|| Error::Config("raw records need device-noise models".into()))?;
                pre = preprocess_pipeline(rec, m, preprocess)?.record;
                &pre
            } else {
                rec
            };
            Ok(Sample {
                seq: chunk_swallow(rec, lab.n_frames, chunk_len)?,
                target: label_to_mask(lab)?,
                label: lab.clone(),
            })
        })
        .collect()
}

/// Shuffles `0..n` with `seed` and cuts it into `k` parts whose sizes differ
/// by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("cannot split {n} items into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, dropout active.
    pub train_loss: f64,
    /// Dropout-free loss and frame accuracy over the whole training set,
    /// when a stopping target is set.
    pub train_eval_loss: Option<f64>,
    pub train_eval_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    /// This epoch set a new best.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

pub fn mean_loss(net: &Network, samples: &[&Sample]) -> Result<f64> {
    Ok(loss_and_accuracy(net, samples, crate::framing::DEFAULT_THRESHOLD)?.0)
}

/// Mean masked MSE and frame accuracy pooled over all valid frames.
pub fn loss_and_accuracy(net: &Network, samples: &[&Sample], threshold: f64) -> Result<(f64, f64)> {
    let per: Vec<(f64, usize, usize)> = samples
        .par_iter()
        .map(|s| {
            let out = net.forward(&s.seq, Mode::Infer)?;
            let loss = crate::nn::masked_mse(&s.target, &out.values, s.target.n_frames)?;
            let n = s.target.n_frames;
            let right = (0..n)
                .filter(|&t| (out.values[t] >= threshold) == (s.target.values[t] >= threshold))
                .count();
            Ok((loss, right, n))
        })
        .collect::<Result<_>>()?;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let right: usize = per.iter().map(|p| p.1).sum();
    let total: usize = per.iter().map(|p| p.2).sum();
    Ok((loss, right as f64 / total as f64))
}

/// Trains one network. With a validation share, parameters from the epoch
/// with the lowest validation loss are returned.
pub fn train_fold(
    samples: &[&Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    fold: Option<usize>,
    meta: TrainingMeta,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Size("no training samples".into()));
    }
    let fold_tag = fold.map_or(0, |f| f as u64 + 1);
    let mut net = Network::new(model_cfg.clone(), derive_seed(cfg.seed, fold_tag, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, fold_tag, 1));

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction_within_train > 0.0 && samples.len() >= 2 {
        ((cfg.val_fraction_within_train * samples.len() as f64).round() as usize).clamp(1, samples.len() - 1)
    } else {
        0
    };
    let val: Vec<&Sample> = order[..n_val].iter().map(|&i| samples[i]).collect();
    let fit: Vec<&Sample> = order[n_val..].iter().map(|&i| samples[i]).collect();

    let hyper = AdamHyper { lr: cfg.lr, ..AdamHyper::default() };
    let mut adam = AdamState::new(net.params.tensors(), hyper);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut fit_idx: Vec<usize> = (0..fit.len()).collect();
    let mut reached_target = false;

    for epoch in 1..=cfg.epochs_max {
        fit_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in fit_idx.chunks(cfg.batch_size).enumerate() {
            let step = adam.step;
            let results: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&i| {
                    let mode = Mode::Train { dropout_seed: derive_seed(cfg.seed, fold_tag << 32 | step, i as u64 + 2) };
                    net.loss_and_grad(&fit[i].seq, &fit[i].target, mode)
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            let mut iter = results.into_iter();
            let (mut batch_loss, mut grad) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                batch_loss += l;
                grad.add_assign(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            loss_sum += batch_loss;
            let grads = grad.tensors();
            adam_step(&mut net.params.tensors_mut(), &grads, &mut adam)?;
            net.params
                .ensure_finite()
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {b}: parameters diverged ({e})")))?;
        }
        let train_loss = loss_sum / fit.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!("training loss {train_loss} at epoch {epoch}")));
        }
        let train_eval = cfg
            .stop_below_train_loss
            .map(|_| loss_and_accuracy(&net, &fit, cfg.threshold))
            .transpose()?;
        let (train_eval_loss, train_eval_accuracy) = (train_eval.map(|e| e.0), train_eval.map(|e| e.1));
        let val_loss = (!val.is_empty()).then(|| mean_loss(&net, &val)).transpose()?;
        let score = val_loss.or(train_eval_loss).unwrap_or(train_loss);
        let improved = best.as_ref().is_none_or(|(s, _, _)| score < *s);
        if improved {
            best = Some((score, epoch, net.params.clone()));
        }
        log::info!(
            "fold {fold:?} epoch {epoch}: train {train_loss:.5} val {val_loss:?} train_eval {train_eval_loss:?}{}",
            if improved { " *" } else { "" }
        );
        history.push(EpochRecord { epoch, train_loss, train_eval_loss, train_eval_accuracy, val_loss, best: improved });

        let loss_met = cfg.stop_below_train_loss.zip(train_eval_loss).is_some_and(|(th, l)| l < th);
        let acc_met = cfg.stop_at_train_accuracy.is_none_or(|a| train_eval_accuracy.is_some_and(|v| v >= a));
        if loss_met && acc_met {
            reached_target = true;
            break;
        }
        if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= cfg.early_stop_patience) {
            break;
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    let mut meta = meta;
    if let Some((score, _, params)) = best {
        meta.metrics.insert("best_score".into(), score);
        // Parameters that met the training target, or the last ones when
        // nothing was held out, are kept as they are.
        if reached_target || (n_val == 0 && cfg.stop_below_train_loss.is_none()) {
            meta.metrics.insert("final_train_loss".into(), history.last().map_or(score, |h| h.train_loss));
        } else {
            net.params = params;
        }
    }
    meta.seed = cfg.seed;
    meta.epochs = history.len();
    meta.best_epoch = best_epoch;
    meta.fold = fold;
    Ok(FoldOutcome {
        checkpoint: Checkpoint { network: net, optimizer: Some(adam), meta },
        history,
        best_epoch,
    })
}

/// Runs the network over `samples` and scores each against its label.
pub fn evaluate(net: &Network, samples: &[&Sample], threshold: f64) -> Result<Vec<(Prediction, EvalRecord)>> {
    samples
        .par_iter()
        .map(|s| {
            let mask = net.forward(&s.seq, Mode::Infer)?;
            let eval = evaluate_swallow(&mask, &s.label, threshold)?;
            let events = decode_mask_to_events(&mask, threshold).ok();
            Ok((Prediction { swallow_id: s.id().to_string(), mask, events }, eval))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub outcome: FoldOutcome,
    pub predictions: Vec<Prediction>,
    pub evals: Vec<EvalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub metrics: FoldReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldSummary>,
    pub overall: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    pub report: CvReport,
}

/// Trains on k-1 folds and tests on the remaining one, k times. Every
/// sample is tested exactly once.
pub fn cross_validate(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    meta: &TrainingMeta,
) -> Result<CvOutcome> {
    cfg.validate()?;
    let splits = kfold_split(samples.len(), cfg.folds, derive_seed(cfg.seed, 0, 7))?;
    let mut folds = Vec::with_capacity(cfg.folds);
    for (f, test_idx) in splits.iter().enumerate() {
        let train: Vec<&Sample> = splits
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().map(|&i| &samples[i]))
            .collect();
        let test: Vec<&Sample> = test_idx.iter().map(|&i| &samples[i]).collect();
        let mut outcome = train_fold(&train, model_cfg, cfg, Some(f), meta.clone())?;
        let scored = evaluate(&outcome.checkpoint.network, &test, cfg.threshold)?;
        let (predictions, evals): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
        if let Some(acc) = fold_report(&evals).accuracy {
            outcome.checkpoint.meta.metrics.insert("test_accuracy_mean".into(), acc.mean);
        }
        log::info!("fold {f}: {} test swallows, best epoch {:?}", test.len(), outcome.best_epoch);
        folds.push(FoldResult {
            fold: f,
            test_ids: test.iter().map(|s| s.id().to_string()).collect(),
            outcome,
            predictions,
            evals,
        });
    }
    let report = CvReport {
        folds: folds
            .iter()
            .map(|r| FoldSummary {
                fold: r.fold,
                test_ids: r.test_ids.clone(),
                epochs_run: r.outcome.history.len(),
                best_epoch: r.outcome.best_epoch,
                metrics: fold_report(&r.evals),
            })
            .collect(),
        overall: eval_report(folds.iter().flat_map(|r| r.evals.iter().cloned()).collect()),
    };
    Ok(CvOutcome { folds, report })
}
