//! Multilabel 12-lead ECG classification toolkit.
//!
//! The crate is a self-contained CPU implementation of a sequence classifier
//! for electrocardiograms: a strided 1D convolution turns a 12-lead recording
//! into a token sequence, a stack of bidirectional selective state-space
//! encoder blocks mixes it, and a class token read by a linear head produces
//! per-abnormality logits. Everything runs on a small f64 tensor engine with
//! reverse-mode automatic differentiation, so training and the numerical
//! test oracles need no external ML framework.
//!
//! Module map:
//! - [`tensor`] — dense f64 tensors + autodiff graph (all numeric kernels)
//! - [`ssm`] — zero-order-hold discretization and the selective scan
//! - [`model`] — the full encoder: conv front-end, encoder blocks, head
//! - [`checkpoint`] — versioned binary parameter container
//! - [`preprocess`] — resampling to 500 Hz and fixed-length cropping/padding
//! - [`data`] — record ingestion, label maps, splits, synthetic corpora
//! - [`train`] — Adam, warm-up + cosine schedule, the training loop
//! - [`metrics`] — macro-averaged AUPRC / AUROC with skip accounting

pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod train;
