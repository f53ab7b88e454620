//! A desk-scale laboratory for semantic watermarks on diffusion latents.
//!
//! The crate models an exactly invertible toy latent diffusion world
//! ([`diffusion`]), four initial-noise watermark schemes ([`watermark`]),
//! pluggable caption/embedding/LLM providers ([`semantic`]), the
//! coherence-preserving semantic injection attack with its hierarchical
//! consistency filter ([`attack`]), and a benchmark harness ([`eval`]).

pub mod attack;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod latfile;
pub mod rng;
pub mod semantic;
pub mod tensor;
pub mod watermark;
pub mod world;

pub use error::{Error, Result};
pub use tensor::LatentTensor;
