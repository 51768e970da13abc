//! CNN engine for 12-lead ECG classification: tensors with reverse-mode
//! gradients, the five benchmark architectures, data handling, training,
//! ROC-AUC evaluation, and latency/memory benchmarking with a combined
//! efficiency score.

pub mod autograd;
pub mod bench;
pub mod data;
pub mod error;
pub(crate) mod fsutil;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Category, Error, Result};
pub use tensor::Tensor;
