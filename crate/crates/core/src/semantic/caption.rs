use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::semantic::ledger::{latent_digest, GenerationLedger};
use crate::semantic::prompt::Prompt;
use crate::tensor::LatentTensor;

/// Produces a text description of a latent image.
pub trait Captioner: Send + Sync {
    fn caption(&self, x: &LatentTensor) -> Result<Prompt>;
}

/// Ledger-backed captioner standing in for an image-to-text model.
///
/// Returns the prompt a latent was generated from, optionally dropping each
/// unprotected token with probability `dropout`. Drops are a deterministic
/// function of `(seed, latent digest, token position)`.
#[derive(Debug, Clone)]
pub struct MockCaptioner {
    ledger: Arc<GenerationLedger>,
    dropout: f64,
    protected: BTreeSet<String>,
    nearest_fallback: bool,
    seed: u64,
}

impl MockCaptioner {
    pub fn new(ledger: Arc<GenerationLedger>) -> Self {
        Self {
            ledger,
            dropout: 0.0,
            protected: BTreeSet::new(),
            nearest_fallback: false,
            seed: 0,
        }
    }

    /// Drops unprotected tokens with probability `p`; tokens in `protected` always survive.
    pub fn with_dropout<I, S>(mut self, p: f64, protected: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("dropout {p} outside [0, 1]")));
        }
        self.dropout = p;
        self.protected = protected.into_iter().map(Into::into).collect();
        Ok(self)
    }

    pub fn with_nearest_fallback(mut self, enabled: bool) -> Self {
        self.nearest_fallback = enabled;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ledger(&self) -> &Arc<GenerationLedger> {
        &self.ledger
    }

    fn keep(&self, digest: &str, position: usize, token: &str) -> bool {
        if self.dropout == 0.0 || self.protected.contains(token) {
            return true;
        }
        let u = (derive_seed(self.seed, digest, position as u64) >> 11) as f64 / (1u64 << 53) as f64;
        u >= self.dropout
    }
}

impl Captioner for MockCaptioner {
    fn caption(&self, x: &LatentTensor) -> Result<Prompt> {
        let record = match self.ledger.lookup(x) {
            Some(r) => r,
            None if self.nearest_fallback => self.ledger.nearest(x).ok_or(Error::Unregistered)?,
            None => return Err(Error::Unregistered),
        };
        let source = Prompt::new(record.prompt)?;
        let digest = latent_digest(x);
        let tokens = source
            .tokens()
            .iter()
            .enumerate()
            .filter(|(i, t)| self.keep(&digest, *i, t))
            .map(|(_, t)| t.clone())
            .collect();
        Ok(Prompt::from_tokens(tokens))
    }
}
