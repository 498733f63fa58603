//! Conditioned multimodal neural fields for sparse spatiotemporal sensing.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`encodings`]: Fourier coordinate features and latent-query seeding.
//! - [`model`]: set encoders, crosstalk stages, refinement loop, decoder.
//! - [`data`]: synthetic coupled fields, sensor masks, windows, noise.
//! - [`training`]: AdamW, warm-restart cosine schedule, task sampling.
//! - [`eval`]: metrics, fusion baselines, sweeps and spectra.
//! - [`container`]: on-disk datasets and checkpoints.

pub mod autodiff;
pub mod config;
pub mod container;
pub mod data;
pub mod encodings;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use config::RunConfig;
pub use model::{ContextSet, ModalityObservations, OmniFieldModel, QuerySet, Targets};
pub use tensor::{Tensor, TensorError};
