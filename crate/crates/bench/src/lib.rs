//! Fixtures shared by the benchmarks.

use dueso::dsp::{fit_baseline_models, ArModel, PreprocessConfig};
use dueso::framing::{chunk_swallow, label_to_mask, ChunkSequence};
use dueso::synth::{generate_dataset, SynthConfig, SynthDataset};
use dueso::FrameMask;

/// A handful of raw synthetic swallows with the full 90 frames.
pub fn corpus(n: usize) -> SynthDataset {
    let cfg = SynthConfig { n_swallows: n, min_frames: 90, max_frames: 90, seed: 1, ..SynthConfig::default() };
    generate_dataset(&cfg).expect("default synth config is valid")
}

pub fn noise_models(ds: &SynthDataset, pp: &PreprocessConfig) -> [ArModel; 3] {
    fit_baseline_models(&ds.baseline, pp).expect("baseline fits")
}

/// One preprocessed, chunked swallow and its target mask.
pub fn network_input() -> (ChunkSequence, FrameMask) {
    let ds = corpus(1);
    let pp = PreprocessConfig::default();
    let models = noise_models(&ds, &pp);
    let s = &ds.swallows[0];
    let rec = dueso::dsp::preprocess_pipeline(&s.record, &models, &pp).expect("pipeline runs").record;
    let seq = chunk_swallow(&rec, s.label.n_frames, 66).expect("chunks");
    (seq, label_to_mask(&s.label).expect("valid label"))
}
