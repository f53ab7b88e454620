//! Coherence-preserving semantic injection (CSI) and the regeneration baseline.
//!
//! CSI inverts an image to its initial latent, asks a proposer for prompts
//! that keep the anchors while carrying the intended edit, regenerates each
//! from the copied noise and keeps only candidates that pass a text-level,
//! a caption-level and a noise-consistency check.

pub mod filter;
pub mod noise;
pub mod pipeline;
pub mod rank;

pub use filter::{filter_text, filter_visual, RejectStage, ScoredCandidate, Stage};
pub use noise::{csw_score, extract_noise, regenerate, CopiedNoise};
pub use pipeline::{run_csi, run_rpm, AttackConfig, AttackKind, AttackResult, Attacker, StageCounts};
pub use rank::{rank_candidates, rank_score};
