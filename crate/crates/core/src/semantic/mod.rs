//! Caption, embedding and candidate-proposal providers.
//!
//! Every provider has a deterministic mock; captioning and candidate
//! proposal also have remote implementations speaking HTTP/JSON with a
//! mandatory on-disk response cache.

pub mod caption;
pub mod encoders;
pub mod ledger;
pub mod prompt;
pub mod propose;
pub mod remote;
pub mod vector;

pub use caption::{Captioner, MockCaptioner};
pub use encoders::{LatentEncoder, TextEncoder};
pub use ledger::GenerationLedger;
pub use prompt::{mask_anchors, AnchorSet, AttackIntent, Prompt};
pub use propose::{AttributeTable, MockProposer, Proposer};
pub use vector::{cosine, UnitVector};
