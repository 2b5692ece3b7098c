//! Deterministic federated-learning simulation core.
//!
//! This crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! - [`autodiff`]: a define-by-run tape with reverse-mode differentiation and
//!   the primitives the mixer models need (grouped conv, pooling, norms, ...).
//! - [`model`]: MLP-Mixer, ConvMixer, PoolFormer and a small residual CNN,
//!   all producing multi-label logits plus a pooled representation.
//! - [`objectives`] and [`optim`]: BCE on logits, the model-contrastive term,
//!   and Adam.
//! - [`data`]: multi-label datasets, a synthetic non-IID generator, client
//!   partitioning and skew measurement.
//! - [`fl`]: the FedAvg / MOON round loop, aggregation and evaluation.
//! - [`metrics`]: micro/macro F1 for multi-label predictions.
//!
//! File formats, the CLI and threaded client execution live in the `fedmix`
//! companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fl;
pub mod gradsuite;
mod math;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
