//! Accelerometry preprocessing.

pub mod ar;
pub mod fir;
pub mod pipeline;
pub mod spline;
pub mod wavelet;

pub use ar::{fit_ar_modified_covariance, whiten_device_noise, ArModel};
pub use fir::{decimate, design_antialias_fir, FirFilter};
pub use pipeline::{fit_baseline_models, preprocess_pipeline, PreprocessConfig, Preprocessed};
pub use spline::{spline_detrend, SplineConfig};
pub use wavelet::{estimate_sigma, soft_threshold, wavelet_denoise, WaveletConfig};
