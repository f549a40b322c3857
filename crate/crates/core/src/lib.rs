//! Feature-space amplitude spectrum transformation for open compound domain
//! adaptation, end to end at desk scale: a deterministic f64 tensor core with
//! reverse-mode gradients, 2D spectral ops, the AST auto-encoder with
//! latent-swap simulation and prototype normalization, a toy dense-prediction
//! CNN, a procedural multi-domain benchmark, domain-discriminability probes,
//! and the full simulate-then-normalize adaptation pipeline.

pub mod ast;
pub mod checkpoint;
pub mod config;
pub mod ddm;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod pairing;
pub mod pipeline;
pub mod rng;
pub mod segmentor;
pub mod spectral;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
