//! A small dense neural-network engine with hand-written reverse-mode passes.

pub mod adam;
pub mod gemm;
pub mod gru;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gru::{gru_cell, gru_stack_forward, GruLayerParams, ReadoutParams};
pub use layers::{conv1d, dense, dropout, maxpool1d, Activation, ConvParams, DenseParams, DropoutMode};
pub use loss::{masked_mse, masked_mse_grad};
pub use tensor::Tensor;
