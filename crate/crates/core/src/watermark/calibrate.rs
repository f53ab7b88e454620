//! Null-distribution threshold calibration.
//!
//! Unwatermarked latents are standard normal, and under exact inversion the
//! detector sees them unchanged, so the null distribution of each statistic
//! is sampled directly from fresh Gaussian latents (with random semantic
//! embeddings for SEAL). The threshold is placed midway between the order
//! statistic that admits `floor(fpr * n)` null exceedances and the next
//! distinct value beyond it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, standard_normal_f64};
use crate::semantic::vector::UnitVector;
use crate::tensor::sample_latent;
use crate::watermark::key::WatermarkKey;
use crate::watermark::outcome::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub n_null: usize,
    pub fpr_target: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_null: 1000,
            fpr_target: 0.01,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_null < 100 {
            return Err(Error::config(format!("n_null must be at least 100, got {}", self.n_null)));
        }
        if !(self.fpr_target > 0.0 && self.fpr_target <= 0.5) {
            return Err(Error::config(format!(
                "fpr_target must lie in (0, 0.5], got {}",
                self.fpr_target
            )));
        }
        Ok(())
    }
}

/// Calibration metadata stored with a key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInfo {
    pub fpr_target: f64,
    pub n_null: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Every null statistic was identical; the threshold sits half a unit beyond it.
    #[serde(default)]
    pub degenerate_null: bool,
}

/// A random unit embedding used as the presented image's semantics in SEAL nulls.
fn null_embedding(seed: u64, dim: usize) -> UnitVector {
    let mut rng = derived_rng(seed, "null/embedding", 0);
    loop {
        if let Ok(u) = UnitVector::normalize(standard_normal_f64(&mut rng, dim)) {
            return u;
        }
    }
}

/// Detector statistics on `n_null` fresh unwatermarked latents.
pub fn null_statistics(key: &WatermarkKey, n_null: usize, seed: u64) -> Result<Vec<f64>> {
    let dim = key.semantic_dim().unwrap_or(1);
    (0..n_null as u64)
        .into_par_iter()
        .map(|i| {
            let z = sample_latent(derive_seed(seed, "null/latent", i), key.shape())?;
            let e = null_embedding(derive_seed(seed, "null/semantic", i), dim);
            Ok(key.detect(&z, &e)?.statistic)
        })
        .collect()
}

/// Threshold admitting at most `floor(fpr * n)` of `stats` on the detecting side.
pub fn threshold_from_null(stats: &[f64], direction: Direction, fpr_target: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Empty("null statistics"));
    }
    if stats.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("null statistics"));
    }
    let first = stats[0];
    if stats.iter().all(|&s| s == first) {
        return Err(Error::DegenerateNull {
            n: stats.len(),
            value: first,
        });
    }
    // orient so that "detected" always means large
    let sign = match direction {
        Direction::AtLeast => 1.0,
        Direction::Below => -1.0,
    };
    let mut s: Vec<f64> = stats.iter().map(|v| sign * v).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let allowed = ((fpr_target * s.len() as f64) + 1e-9).floor() as usize;
    let v = s[allowed.min(s.len() - 1)];
    let above = s.iter().copied().filter(|&x| x > v).fold(f64::INFINITY, f64::min);
    let t = if above.is_finite() {
        0.5 * (v + above)
    } else {
        v + f64::max(1e-9, v.abs() * 1e-9)
    };
    Ok(sign * t)
}

pub fn calibrate_threshold(key: &WatermarkKey, n_null: usize, fpr_target: f64, seed: u64) -> Result<f64> {
    CalibrationConfig { n_null, fpr_target }.validate()?;
    let stats = null_statistics(key, n_null, seed)?;
    threshold_from_null(&stats, key.scheme().direction(), fpr_target)
}

/// Calibrates `key` in place. A degenerate null on a count statistic
/// (SEAL) puts the threshold half a count beyond the constant null value.
pub fn calibrate(key: &mut WatermarkKey, cfg: &CalibrationConfig, seed: u64) -> Result<CalibrationInfo> {
    let (threshold, degenerate_null) = match calibrate_threshold(key, cfg.n_null, cfg.fpr_target, seed) {
        Ok(t) => (t, false),
        Err(Error::DegenerateNull { value, .. }) if key.is_count_statistic() => {
            let t = match key.scheme().direction() {
                Direction::AtLeast => value + 0.5,
                Direction::Below => value - 0.5,
            };
            log::info!("{} null statistics all equal {value}; threshold set to {t}", key.scheme());
            (t, true)
        }
        Err(e) => return Err(e),
    };
    key.set_threshold(threshold);
    Ok(CalibrationInfo {
        fpr_target: cfg.fpr_target,
        n_null: cfg.n_null,
        seed,
        threshold,
        degenerate_null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::watermark::gsw::GswKey;
    use statrs::distribution::{Binomial, DiscreteCDF};

    fn gsw() -> WatermarkKey {
        WatermarkKey::Gsw(GswKey::generate(64, Shape::default(), 7).unwrap())
    }

    #[test]
    fn gsw_threshold_matches_binomial_quantile() {
        // Under the null each decoded bit matches with probability 1/2, so the
        // match count is Binomial(64, 1/2). Smallest c with P(X >= c) <= 0.01:
        let bin = Binomial::new(0.5, 64).unwrap();
        let c = (0..=64u64).find(|&c| c > 0 && bin.sf(c - 1) <= 0.01).unwrap();
        assert_eq!(c, 42);
        let t = calibrate_threshold(&gsw(), 1000, 0.01, 11).unwrap();
        assert!((0.64..=0.70).contains(&t), "{t}");
        // the empirical quantile may land one count either side of the exact one
        assert!((t * 64.0 - (c as f64 - 0.5)).abs() <= 1.0 + 1e-9, "{t}");
    }

    #[test]
    fn half_fpr_gives_median() {
        let key = gsw();
        let stats = null_statistics(&key, 1001, 3).unwrap();
        let mut sorted = stats.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[500];
        let t = threshold_from_null(&stats, Direction::AtLeast, 0.5).unwrap();
        assert!((t - median).abs() <= 1.0 / 64.0, "{t} vs {median}");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let key = gsw();
        assert_eq!(
            calibrate_threshold(&key, 200, 0.01, 5).unwrap(),
            calibrate_threshold(&key, 200, 0.01, 5).unwrap()
        );
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert!(matches!(
            threshold_from_null(&[3.0; 200], Direction::AtLeast, 0.01),
            Err(Error::DegenerateNull { .. })
        ));
        let key = gsw();
        assert!(calibrate_threshold(&key, 50, 0.01, 1).is_err());
        assert!(calibrate_threshold(&key, 200, 0.0, 1).is_err());
        assert!(calibrate_threshold(&key, 200, 0.6, 1).is_err());
    }

    #[test]
    fn lower_tail_direction() {
        let stats: Vec<f64> = (0..100).map(f64::from).collect();
        let t = threshold_from_null(&stats, Direction::Below, 0.05).unwrap();
        let fp = stats.iter().filter(|&&s| Direction::Below.accepts(s, t)).count();
        assert_eq!(fp, 5);
        let t = threshold_from_null(&stats, Direction::AtLeast, 0.05).unwrap();
        let fp = stats.iter().filter(|&&s| Direction::AtLeast.accepts(s, t)).count();
        assert_eq!(fp, 5);
    }
}
