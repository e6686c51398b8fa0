//! Entropic optimal transport maps for conditional perturbation-response
//! prediction.
//!
//! The crate trains neural transport maps that move a population of control
//! cells onto a perturbed population, conditioned on a description of the
//! perturbation (drug identity and dose). The main pieces:
//!
//! - [`ot`]: log-domain Sinkhorn solver, debiased Sinkhorn divergence and its
//!   analytic gradients with respect to point positions.
//! - [`monge`]: the Monge gap regularizer and the per-step conditional loss.
//! - [`nn`]: a small fully-connected network with exact reverse-mode
//!   gradients, GELU activations and an AdamW optimizer.
//! - [`autoencoder`]: encoder/decoder pair used to learn maps in a latent
//!   space.
//! - [`conditioning`]: dose and drug-embedding encoders, set pooling for
//!   combination treatments, and mode-of-action embeddings via metric MDS.
//! - [`trainer`]: the conditional map model, its training loop and
//!   prediction path.
//! - [`metrics`]: R-squared of feature means, unbiased MMD, and transport
//!   cost between predicted and observed populations.
//! - [`data`]: dataset loading, split scenarios, batch sampling and a
//!   synthetic data generator with known ground truth.
//! - [`pipeline`]: end-to-end stages (generate, train, embed, evaluate) that
//!   read an [`config::ExperimentConfig`] and write artifacts to disk.
//!
//! All numerics are double precision and all randomness flows from explicit
//! seeds, so every stage is reproducible bit for bit.

pub mod autoencoder;
pub mod conditioning;
pub mod config;
pub mod data;
pub mod error;
pub mod measure;
pub mod metrics;
pub mod monge;
pub mod nn;
pub mod ot;
pub mod pipeline;
mod seed;
pub mod smacof;
pub mod trainer;

pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
