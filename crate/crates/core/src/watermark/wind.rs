//! WIND: a bank of secret initial noises; detection looks for the closest one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, standard_normal_f32};
use crate::tensor::{LatentTensor, Shape};
use crate::watermark::codec;
use crate::watermark::outcome::{DetectionOutcome, Scheme};

const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindConfig {
    pub bank_size: usize,
    /// Bank entries are resampled until all pairwise cosines fall below this.
    pub max_pairwise_cosine: f64,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            bank_size: 16,
            max_pairwise_cosine: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankEntry {
    #[serde(with = "codec::f32s")]
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindKeyRepr", into = "WindKeyRepr")]
pub struct WindKey {
    pub shape: Shape,
    pub bank: Vec<LatentTensor>,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindKeyRepr {
    shape: Shape,
    bank: Vec<BankEntry>,
    threshold: f64,
}

impl TryFrom<WindKeyRepr> for WindKey {
    type Error = Error;

    fn try_from(r: WindKeyRepr) -> Result<Self> {
        let bank = r
            .bank
            .into_iter()
            .map(|e| LatentTensor::new(r.shape, e.data))
            .collect::<Result<_>>()?;
        Ok(Self {
            shape: r.shape,
            bank,
            threshold: r.threshold,
        })
    }
}

impl From<WindKey> for WindKeyRepr {
    fn from(k: WindKey) -> Self {
        Self {
            shape: k.shape,
            bank: k
                .bank
                .into_iter()
                .map(|t| BankEntry {
                    data: t.data().to_vec(),
                })
                .collect(),
            threshold: k.threshold,
        }
    }
}

impl WindKey {
    pub fn generate(cfg: &WindConfig, shape: Shape, seed: u64) -> Result<Self> {
        shape.validate()?;
        if cfg.bank_size == 0 {
            return Err(Error::Empty("noise bank"));
        }
        let mut rng = derived_rng(seed, "wind/bank", 0);
        let mut bank: Vec<LatentTensor> = Vec::with_capacity(cfg.bank_size);
        let mut draws = 0;
        while bank.len() < cfg.bank_size {
            if draws > cfg.bank_size + MAX_RESAMPLES {
                return Err(Error::config(format!(
                    "could not draw {} bank noises with pairwise cosine below {}",
                    cfg.bank_size, cfg.max_pairwise_cosine
                )));
            }
            draws += 1;
            let cand = LatentTensor::new(shape, standard_normal_f32(&mut rng, shape.len()))?;
            let mut ok = true;
            for b in &bank {
                if cand.cosine(b)? >= cfg.max_pairwise_cosine {
                    ok = false;
                    break;
                }
            }
            if ok {
                bank.push(cand);
            }
        }
        Ok(Self {
            shape,
            bank,
            threshold: cfg.max_pairwise_cosine,
        })
    }

    pub fn embed(&self, index: usize) -> Result<LatentTensor> {
        self.bank.get(index).cloned().ok_or_else(|| {
            Error::config(format!("bank index {index} out of range for {} entries", self.bank.len()))
        })
    }

    /// `(max cosine, argmax)` over the bank.
    pub fn best_match(&self, z_hat: &LatentTensor) -> Result<(f64, usize)> {
        if self.bank.is_empty() {
            return Err(Error::Empty("noise bank"));
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, b) in self.bank.iter().enumerate() {
            let c = z_hat.cosine(b)?;
            if c > best.0 {
                best = (c, i);
            }
        }
        Ok(best)
    }

    pub fn detect(&self, z_hat: &LatentTensor) -> Result<DetectionOutcome> {
        let (cos, idx) = self.best_match(z_hat)?;
        let mut o = DetectionOutcome::decide(Scheme::Wind, cos, self.threshold);
        o.matched_index = Some(idx);
        Ok(o)
    }
}
