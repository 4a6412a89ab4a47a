//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use dueso::dsp::wavelet::wavelet_denoise_with;
use dueso::dsp::*;
use dueso::framing::{decode_mask_to_events, label_to_mask};
use dueso::gradcheck::{gradcheck, random_problem, GradcheckConfig};
use dueso::io::*;
use dueso::metrics::{confusion, metrics};
use dueso::model::{Checkpoint, Mode, ModelConfig, TrainingMeta};
use dueso::nn::{gru_stack_forward, masked_mse, ReadoutParams};
use dueso::synth::{generate_dataset, SynthConfig};
use dueso::train::{cross_validate, train_fold, Sample, TrainConfig};
use dueso::{Confusion, FrameMask, KinematicLabel, Stage, SwallowRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::Digest;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn check_time(o: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let ok = elapsed < limit;
    let detail = format!("{}; {:.2?} (limit {:?})", o.detail, elapsed, limit);
    outcome(o.passed && ok, detail)
}

fn shape_chain() -> Outcome {
    let cfg = ModelConfig::default();
    let (net, seq, _) = random_problem(&cfg, 90, 1).unwrap();
    let trace = net.forward_trace(&seq, Mode::Infer).unwrap();
    let s = trace.observed_shapes(&cfg);
    let want = (
        (66, 3),
        (62, 48),
        (31, 48),
        (27, 48),
        None,
        1296,
        vec![64, 64, 64],
        64,
        5760,
        vec![128, 128, 128],
        90,
    );
    let got = (s.input, s.conv1, s.pool1, s.conv2, s.pool2, s.cnn_features, s.gru.clone(), s.readout, s.flattened, s.fc.clone(), s.output);
    outcome(got == want, format!("{:?} -> {:?} -> {:?} -> {:?} -> {} -> {:?} -> {} -> {:?} -> {}", s.input, s.conv1, s.pool1, s.conv2, s.cnn_features, s.gru, s.flattened, s.fc, s.output))
}

fn gradient_integrity() -> Outcome {
    let gc = GradcheckConfig { seed: 2024, ..Default::default() };
    assert!(gc.samples_per_layer >= 50 && gc.step == 1e-4 && gc.tolerance == 1e-4);
    let report = gradcheck(&ModelConfig::default(), &gc).unwrap();
    let min_checked = report.layers.iter().map(|l| l.checked).min().unwrap_or(0);
    outcome(
        report.passed() && min_checked >= 50,
        format!("{} layers, >= {min_checked} params each, worst rel err {:.2e}", report.layers.len(), report.worst()),
    )
}

fn gru_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n_layers = rng.random_range(1..=3);
        let input = rng.random_range(1..=12);
        let hidden = rng.random_range(1..=10);
        let steps = rng.random_range(1..=25);
        let mut layers = vec![random_gru(input, hidden, &mut rng)];
        for _ in 1..n_layers {
            layers.push(random_gru(hidden, hidden, &mut rng));
        }
        let out = rng.random_range(1..=6);
        let mut readout = ReadoutParams::zeros(hidden, out);
        readout.u.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        readout.c.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let validity: Vec<bool> = (0..steps).map(|_| rng.random_bool(0.75)).collect();
        let x: Vec<f64> = (0..steps * input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = gru_stack_forward(&x, &validity, &layers, &readout).unwrap();
        let b = scalar_gru_stack(&x, &validity, &layers, &readout);
        worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(worst, f64::max);
    }
    outcome(worst <= 1e-8, format!("20 cases, max |diff| {worst:.2e}"))
}

fn loss_and_metrics() -> Outcome {
    let mut problems = Vec::new();
    let mut truth = FrameMask { values: vec![0.0; 90], validity: vec![false; 90], n_frames: 3 };
    truth.values[..3].copy_from_slice(&[1.0, 0.0, 1.0]);
    truth.validity[..2].copy_from_slice(&[true, true]);
    let mut pred = vec![0.0; 90];
    pred[..3].copy_from_slice(&[0.5, 0.5, 0.0]);
    let l = masked_mse(&truth, &pred, 3).unwrap();
    if (l - (0.25 + 0.25) / 3.0).abs() > 1e-12 {
        problems.push(format!("masked_mse {l}"));
    }
    if masked_mse(&truth, &truth.values, 3).unwrap() != 0.0 {
        problems.push("identical masks give nonzero loss".into());
    }
    let blank = FrameMask { validity: vec![false; 90], ..truth.clone() };
    if masked_mse(&blank, &pred, 3).unwrap() != 0.0 {
        problems.push("all-zero mask gives nonzero loss".into());
    }
    let m = metrics(&Confusion { tp: 5, tn: 3, fp: 1, fn_: 1 });
    let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= 1e-12);
    if !(close(m.accuracy, 8.0 / 10.0) && close(m.sensitivity, 5.0 / 6.0) && close(m.specificity, 3.0 / 4.0)) {
        problems.push(format!("metrics {m:?}"));
    }
    let t = dueso::pad_mask(&[0., 0., 1., 1., 1., 0., 0., 0.]).unwrap();
    let p0 = dueso::pad_mask(&[0.; 8]).unwrap();
    if confusion(&t, &t).unwrap() != (Confusion { tp: 3, tn: 5, fp: 0, fn_: 0 })
        || confusion(&p0, &t).unwrap() != (Confusion { tp: 0, tn: 5, fp: 0, fn_: 3 })
    {
        problems.push("confusion examples".into());
    }
    let mut combos = 0usize;
    for n in 1..=90 {
        for o in 0..n {
            for c in o + 1..=n {
                let lab = KinematicLabel::new("e", n, o, c).unwrap();
                let ev = decode_mask_to_events(&label_to_mask(&lab).unwrap(), 0.5).unwrap();
                if (ev.opening_frame, ev.closure_frame) != (o, c) {
                    problems.push(format!("decode(encode({o},{c},{n})) = {ev:?}"));
                }
                combos += 1;
            }
        }
    }
    outcome(problems.is_empty(), format!("{combos} (o,c,n) round trips; {}", if problems.is_empty() { "all exact".into() } else { problems.join(", ") }))
}

fn dsp_suite() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let pp = PreprocessConfig::default();
    let filter = pp.antialias_filter().unwrap();
    let dc = fir_gain(&filter.taps, 0.0, 20_000.0);
    let worst_stop = (0..=750)
        .map(|k| 2500.0 + k as f64 * 10.0)
        .map(|f| 20.0 * (fir_gain(&filter.taps, f, 20_000.0) / dc).log10())
        .fold(f64::NEG_INFINITY, f64::max);
    ok &= worst_stop <= -60.0;
    notes.push(format!("(a) stopband >= 2.5 kHz {:.1} dB", -worst_stop));

    let n = 20_000;
    let tone: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * 100.0 * i as f64 / 20_000.0).sin()).collect();
    let out = decimate(&tone, &filter, 5).unwrap();
    let expect: Vec<f64> = (0..out.len()).map(|i| (std::f64::consts::TAU * 100.0 * i as f64 / 4000.0).sin()).collect();
    let lo = 200;
    let hi = out.len() - 200;
    let err = rms(&out[lo..hi].iter().zip(&expect[lo..hi]).map(|(a, b)| a - b).collect::<Vec<_>>()) / rms(&expect[lo..hi]);
    ok &= err <= 0.01;
    notes.push(format!("100 Hz error {:.3}%", 100.0 * err));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = [1.2, -0.6, 0.2];
    let mut x = vec![0.0f64; 100_000 + 500];
    for i in 3..x.len() {
        let e: f64 = rng.sample(StandardNormal);
        x[i] = a[0] * x[i - 1] + a[1] * x[i - 2] + a[2] * x[i - 3] + e;
    }
    let x = x.split_off(500);
    let model = fit_ar_modified_covariance(&x, 10).unwrap();
    let w = whiten_device_noise(&x, &model);
    let worst_ac = (1..=10).map(|k| autocorr(&w[10..], k).abs()).fold(0.0, f64::max);
    ok &= worst_ac < 0.05;
    notes.push(format!("(b) max |acf| {worst_ac:.4}"));

    let n = 4000;
    let cubic: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            3.0 - 2.0 * t + 5.0 * t * t - 4.0 * t * t * t
        })
        .collect();
    let resid = spline_detrend(&cubic, 4000.0, &SplineConfig::default()).unwrap();
    let rel = rms(&resid) / rms(&cubic);
    ok &= rel <= 1e-6;
    notes.push(format!("(c) cubic residual {rel:.1e} RMS"));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sig: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let back = wavelet_denoise_with(&sig, &WaveletConfig::default(), Some(0.0)).unwrap();
    let rt = rms(&back.iter().zip(&sig).map(|(a, b)| a - b).collect::<Vec<_>>()) / rms(&sig);
    ok &= rt <= 1e-8;
    notes.push(format!("(d) round trip {rt:.1e} RMS"));

    let n = 8192;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / 4000.0;
            (std::f64::consts::TAU * (3.0 * t + 4.0 * t * t)).sin()
        })
        .collect();
    let sigma = rms(&clean) / 10f64.powf(5.0 / 20.0);
    let mut worst_out = f64::INFINITY;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let noisy: Vec<f64> = clean.iter().map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let den = wavelet_denoise(&noisy, &WaveletConfig::default()).unwrap();
        worst_out = worst_out.min(snr_db(&clean, &den));
    }
    ok &= worst_out >= 10.0;
    notes.push(format!("(e) 5 dB chirp -> {worst_out:.1} dB (worst of 5)"));
    outcome(ok, notes.join(", "))
}

fn overfit() -> Outcome {
    let samples = synthetic_samples(&SynthConfig { n_swallows: 8, event_snr_db: None, seed: 1, ..Default::default() });
    let refs: Vec<&Sample> = samples.iter().collect();
    let tc = TrainConfig {
        epochs_max: 2000,
        batch_size: 8,
        val_fraction_within_train: 0.0,
        stop_below_train_loss: Some(0.01),
        stop_at_train_accuracy: Some(0.99),
        early_stop_patience: 2000,
        seed: 1,
        ..Default::default()
    };
    let out = train_fold(&refs, &ModelConfig::default(), &tc, None, TrainingMeta::default()).unwrap();
    let net = &out.checkpoint.network;
    let mse = mean_masked_mse(net, &refs);
    let acc = pooled_frame_accuracy(net, &refs);
    outcome(
        mse < 0.01 && acc >= 0.99 && out.history.len() <= 2000,
        format!("{} epochs, train MSE {mse:.5}, frame accuracy {acc:.4}", out.history.len()),
    )
}

fn benchmark() -> Outcome {
    let samples = synthetic_samples(&SynthConfig { n_swallows: 200, event_snr_db: Some(10.0), seed: 7, ..Default::default() });
    let tc = TrainConfig { epochs_max: 30, early_stop_patience: 10, seed: 7, ..Default::default() };
    let cv = cross_validate(&samples, &ModelConfig::default(), &tc, &TrainingMeta::default()).unwrap();
    let r = &cv.report.overall;
    let acc = r.summary.accuracy.map_or(0.0, |s| s.mean);
    let within3 = r.opening_tolerance.iter().find(|t| t.threshold_frames == 3).map_or(0.0, |t| t.percent);
    outcome(
        acc >= 0.85 && within3 >= 70.0 && r.n_swallows == 200,
        format!("{} folds, mean accuracy {acc:.4}, opening error < 3 frames {within3:.1}%", cv.folds.len()),
    )
}

fn determinism() -> Outcome {
    let cfg = SynthConfig { n_swallows: 12, seed: 3, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str| {
        let ds = generate_dataset(&cfg).unwrap();
        let entries: Vec<_> = ds.swallows.iter().map(|s| (s.record.clone(), s.label.clone())).collect();
        let root = dir.path().join(name);
        write_dataset(&root, &entries, Some(&ds.baseline), Some(&cfg)).unwrap();
        let mut files: Vec<_> = walk(&root);
        files.sort();
        files.iter().map(|p| (p.strip_prefix(&root).unwrap().to_path_buf(), std::fs::read(p).unwrap())).collect::<Vec<_>>()
    };
    let same_data = write("a") == write("b");

    let samples = synthetic_samples(&cfg);
    let tc = TrainConfig { folds: 3, epochs_max: 2, batch_size: 4, seed: 9, ..Default::default() };
    let run = || {
        let cv = cross_validate(&samples, &ModelConfig::default(), &tc, &TrainingMeta::default()).unwrap();
        let ckpts: Vec<Vec<u8>> = cv.folds.iter().map(|f| encode_checkpoint(&f.outcome.checkpoint).unwrap()).collect();
        (ckpts, serde_json::to_string(&cv.report).unwrap())
    };
    let (a, b) = (run(), run());
    outcome(
        same_data && a == b,
        format!("dataset bytes identical: {same_data}; 3 checkpoints + report identical: {}", a == b),
    )
}

fn walk(p: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(p).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn serialization() -> Outcome {
    let mut problems = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ch = |rng: &mut ChaCha8Rng| (0..333).map(|_| rng.random_range(-1e3f32..1e3)).collect::<Vec<f32>>();
    let rec = SwallowRecord::new("r", [ch(&mut rng), ch(&mut rng), ch(&mut rng)], Stage::Raw20k).unwrap();
    let sig = encode_signal(&rec);
    if decode_signal(&sig, "r").unwrap() != rec {
        problems.push("signal round trip".to_string());
    }
    let lab = KinematicLabel::new("r", 55, 12, 40).unwrap();
    if decode_label(&encode_label(&lab)).unwrap() != lab {
        problems.push("label round trip".to_string());
    }

    let cfg = SynthConfig { n_swallows: 4, seed: 2, ..Default::default() };
    let samples = synthetic_samples(&cfg);
    let refs: Vec<&Sample> = samples.iter().collect();
    let tc = TrainConfig { epochs_max: 1, batch_size: 2, seed: 2, ..Default::default() };
    let ckpt = train_fold(&refs, &ModelConfig::default(), &tc, Some(0), TrainingMeta::default()).unwrap().checkpoint;
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let back: Checkpoint = decode_checkpoint(&bytes).unwrap();
    if back != ckpt || encode_checkpoint(&back).unwrap() != bytes {
        problems.push("checkpoint round trip".to_string());
    }
    let before = ckpt.network.forward(&samples[0].seq, Mode::Infer).unwrap();
    let after = back.network.forward(&samples[0].seq, Mode::Infer).unwrap();
    if before.values.iter().zip(&after.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
        problems.push("forward after reload differs".to_string());
    }

    // Corruptions: every truncation of the headers, strided truncations of the
    // payloads, and byte flips. Each must be an error, never a panic.
    let mut corruptions = 0usize;
    let mut check = |what: &str, result: std::thread::Result<bool>| {
        corruptions += 1;
        match result {
            Ok(true) => {}
            Ok(false) => problems.push(format!("{what}: accepted")),
            Err(_) => problems.push(format!("{what}: panicked")),
        }
    };
    let cuts = |len: usize| (0..len.min(600)).chain((600..len).step_by(len / 97 + 1));
    for cut in cuts(sig.len()) {
        check("signal truncation", catch_unwind(|| decode_signal(&sig[..cut], "r").is_err()));
    }
    for cut in cuts(bytes.len()) {
        check("checkpoint truncation", catch_unwind(|| decode_checkpoint(&bytes[..cut]).is_err()));
    }
    let text = encode_label(&lab);
    for cut in 0..text.len() - 1 {
        check("label truncation", catch_unwind(|| decode_label(&text[..cut]).is_err()));
    }
    for pos in (0..20).chain([4, 6, 10, 11, 19]) {
        let mut b = sig.clone();
        b[pos] ^= 0xA5;
        let r = catch_unwind(AssertUnwindSafe(|| decode_signal(&b, "r").map(|x| x != rec).unwrap_or(true)));
        check("signal header flip", r);
    }
    let manifest_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    for k in 0..200 {
        let pos = 14 + (k * 7919) % manifest_len;
        let mut b = bytes.clone();
        b[pos] ^= 0x20;
        check("checkpoint manifest flip", catch_unwind(|| decode_checkpoint(&b).is_err()));
    }
    for k in 0..50 {
        let pos = 14 + manifest_len + (k * 104_729) % (bytes.len() - 14 - manifest_len);
        let mut b = bytes.clone();
        b[pos] ^= 0x01;
        check("checkpoint payload flip", catch_unwind(|| decode_checkpoint(&b).is_err()));
    }
    let mut wrong = ckpt.clone();
    wrong.network.config.readout_dim = 32;
    let mismatched = encode_checkpoint_unchecked(&ckpt, &wrong.network.config);
    match decode_checkpoint(&mismatched) {
        Err(e) if e.kind() == "FormatError" => {}
        other => problems.push(format!("shape mismatch gave {:?}", other.map(|_| ()))),
    }
    outcome(problems.is_empty(), format!("3 round trips bit-exact, {corruptions} corruptions rejected; {}", if problems.is_empty() { "no panics".to_string() } else { problems.join(", ") }))
}

/// Rewrites the manifest's config (and fingerprint) without touching tensors.
fn encode_checkpoint_unchecked(ckpt: &Checkpoint, cfg: &ModelConfig) -> Vec<u8> {
    let bytes = encode_checkpoint(ckpt).unwrap();
    let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let mut manifest: serde_json::Value = serde_json::from_slice(&bytes[14..14 + len]).unwrap();
    manifest["config"] = serde_json::to_value(cfg).unwrap();
    manifest["fingerprint"] = serde_json::Value::String(cfg.fingerprint());
    let json = serde_json::to_vec(&manifest).unwrap();
    let mut out = bytes[..6].to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[14 + len..bytes.len() - 32]);
    let digest = sha2::Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn main() {
    let criteria: Vec<(&str, &str, fn() -> Outcome, Duration)> = vec![
        ("1", "shape chain", shape_chain, Duration::from_secs(1)),
        ("2", "gradient integrity", gradient_integrity, Duration::from_secs(120)),
        ("3", "GRU oracle equivalence", gru_oracle, Duration::from_secs(600)),
        ("4", "loss/metric exactness", loss_and_metrics, Duration::from_secs(600)),
        ("5", "DSP suite", dsp_suite, Duration::from_secs(60)),
        ("6", "overfit", overfit, Duration::from_secs(300)),
        ("7", "synthetic benchmark", benchmark, Duration::from_secs(1800)),
        ("8", "determinism", determinism, Duration::from_secs(600)),
        ("9", "serialization", serialization, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let result = check_time(result, start.elapsed(), limit);
        if !result.passed {
            failed += 1;
        }
        println!("{} criterion {id} ({name}): {}", if result.passed { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
