//! Gaussian Shading: each secret bit fixes the sign of every entry in its
//! block of the initial noise while magnitudes stay half-normal, so the
//! marginal distribution of each entry is still standard normal.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed};
use crate::tensor::{LatentTensor, Shape};
use crate::watermark::codec;
use crate::watermark::outcome::{DetectionOutcome, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GswConfig {
    pub bits: usize,
}

impl Default for GswConfig {
    fn default() -> Self {
        Self { bits: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GswKey {
    pub shape: Shape,
    #[serde(with = "codec::bits")]
    pub bits: Vec<bool>,
    /// Permutation of latent indices; block `k` is `block_map[k*B..(k+1)*B]`.
    #[serde(with = "codec::u32s")]
    pub block_map: Vec<u32>,
    pub threshold: f64,
}

impl GswKey {
    pub fn generate(k: usize, shape: Shape, seed: u64) -> Result<Self> {
        shape.validate()?;
        if k == 0 || !shape.len().is_multiple_of(k) {
            return Err(Error::config(format!(
                "bit count {k} must divide the latent size {}",
                shape.len()
            )));
        }
        let mut rng = derived_rng(seed, "gsw/bits", 0);
        let bits = (0..k).map(|_| rng.random_bool(0.5)).collect();
        let mut block_map: Vec<u32> = (0..shape.len() as u32).collect();
        block_map.shuffle(&mut derived_rng(seed, "gsw/blocks", 0));
        Ok(Self {
            shape,
            bits,
            block_map,
            threshold: crate::watermark::reference::GSW_THRESHOLD,
        })
    }

    pub fn bit_count(&self) -> usize {
        self.bits.len()
    }

    fn block_len(&self) -> usize {
        self.block_map.len() / self.bits.len()
    }

    fn blocks(&self) -> impl Iterator<Item = &[u32]> {
        self.block_map.chunks_exact(self.block_len())
    }

    /// Half-normal magnitudes with block signs set by the secret bits.
    pub fn embed(&self, seed: u64) -> Result<LatentTensor> {
        let mut rng = rng_from_seed(seed);
        let mut data = vec![0.0f32; self.shape.len()];
        for (block, &bit) in self.blocks().zip(&self.bits) {
            for &i in block {
                let v: f64 = StandardNormal.sample(&mut rng);
                let mag = v.abs() as f32;
                data[i as usize] = if bit { mag } else { -mag };
            }
        }
        LatentTensor::new(self.shape, data)
    }

    /// Majority sign per block; ties fall back to the sign of the block sum.
    pub fn decode(&self, z_hat: &LatentTensor) -> Result<Vec<bool>> {
        z_hat.ensure_shape(self.shape)?;
        let d = z_hat.data();
        Ok(self
            .blocks()
            .map(|block| {
                let pos = block.iter().filter(|&&i| d[i as usize] > 0.0).count();
                let neg = block.iter().filter(|&&i| d[i as usize] < 0.0).count();
                if pos != neg {
                    pos > neg
                } else {
                    block.iter().map(|&i| d[i as usize] as f64).sum::<f64>() >= 0.0
                }
            })
            .collect())
    }

    pub fn accuracy(&self, z_hat: &LatentTensor) -> Result<f64> {
        let decoded = self.decode(z_hat)?;
        let hits = decoded.iter().zip(&self.bits).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / self.bits.len() as f64)
    }

    pub fn detect(&self, z_hat: &LatentTensor) -> Result<DetectionOutcome> {
        Ok(DetectionOutcome::decide(Scheme::Gsw, self.accuracy(z_hat)?, self.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_latent;

    #[test]
    fn blocks_partition_the_latent() {
        let k = GswKey::generate(64, Shape::default(), 1).unwrap();
        let mut seen = vec![false; k.shape.len()];
        for b in k.blocks() {
            assert_eq!(b.len(), 64);
            for &i in b {
                assert!(!seen[i as usize]);
                seen[i as usize] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn embed_then_decode_is_perfect() {
        let k = GswKey::generate(64, Shape::default(), 1).unwrap();
        let z = k.embed(5).unwrap();
        assert_eq!(k.accuracy(&z).unwrap(), 1.0);
        assert!(k.detect(&z).unwrap().detected);
        assert_eq!(k.accuracy(&z.scale(-1.0)).unwrap(), 0.0);
    }

    #[test]
    fn watermarked_entries_keep_standard_normal_moments() {
        let k = GswKey::generate(64, Shape::default(), 2).unwrap();
        let v = k.embed(9).unwrap().to_f64();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn null_accuracy_is_near_half() {
        let k = GswKey::generate(64, Shape::default(), 3).unwrap();
        let mean = (0..500)
            .map(|s| k.accuracy(&sample_latent(10_000 + s, k.shape).unwrap()).unwrap())
            .sum::<f64>()
            / 500.0;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn bit_count_must_divide() {
        assert!(GswKey::generate(60, Shape::default(), 1).is_err());
        assert!(GswKey::generate(0, Shape::default(), 1).is_err());
    }
}
