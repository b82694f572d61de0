//! Conditional variational autoencoder synthesis of multichannel EEG.
//!
//! The crate covers the whole pipeline: ingesting continuous recordings
//! ([`data`]), filtering and time-frequency analysis ([`dsp`]), a small
//! set of numerical kernels with hand-written backward passes ([`nn`]),
//! the conditional VAE itself ([`cvae`]), condition-vector manipulation
//! of resting-state epochs ([`generate`]) and a ground-truth synthetic
//! benchmark ([`synthbench`]).

pub mod cvae;
pub mod data;
pub mod dsp;
pub mod error;
pub mod generate;
pub mod nn;
pub mod synthbench;

pub use error::{Error, Result};
