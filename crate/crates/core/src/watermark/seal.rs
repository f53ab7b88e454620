//! SEAL-style content-aware watermark.
//!
//! The latent is cut into a grid of patches spanning all channels. Patch
//! `p` is filled with Gaussian noise from a keyed PRF stream selected by
//! bit `p` of the SimHash of the image's semantic embedding. Detection
//! rebuilds that reference from the presented image's embedding and counts
//! patches whose Pearson correlation with the inverted noise clears a cutoff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, standard_normal_f64};
use crate::semantic::vector::UnitVector;
use crate::tensor::{LatentTensor, Shape};
use crate::watermark::codec;
use crate::watermark::outcome::{DetectionOutcome, Scheme};
use crate::watermark::simhash::{random_hyperplanes, simhash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SealConfig {
    /// Patches per side; the grid has `grid * grid` patches, one SimHash bit each.
    pub grid: usize,
    pub corr_cutoff: f64,
    /// Dimension of the semantic embedding space the hyperplanes live in.
    pub embed_dim: usize,
}

impl Default for SealConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            corr_cutoff: 0.5,
            embed_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SealKey {
    pub shape: Shape,
    pub grid: usize,
    pub embed_dim: usize,
    /// Row-major `[P, embed_dim]` hyperplane normals.
    #[serde(with = "codec::f64s")]
    pub hyperplanes: Vec<f64>,
    pub prf_seed: u64,
    pub corr_cutoff: f64,
    pub match_threshold: f64,
}

impl SealKey {
    pub fn generate(cfg: &SealConfig, shape: Shape, seed: u64) -> Result<Self> {
        shape.validate()?;
        if cfg.grid == 0 || !shape.height.is_multiple_of(cfg.grid) || !shape.width.is_multiple_of(cfg.grid) {
            return Err(Error::config(format!(
                "patch grid {} must divide the spatial extent {}x{}",
                cfg.grid, shape.height, shape.width
            )));
        }
        if cfg.embed_dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if !(-1.0..=1.0).contains(&cfg.corr_cutoff) {
            return Err(Error::config("correlation cutoff must lie in [-1, 1]"));
        }
        let p = cfg.grid * cfg.grid;
        let planes = random_hyperplanes(p, cfg.embed_dim, crate::rng::derive_seed(seed, "seal/planes", 0));
        Ok(Self {
            shape,
            grid: cfg.grid,
            embed_dim: cfg.embed_dim,
            hyperplanes: planes.iter().flat_map(|u| u.values().to_vec()).collect(),
            prf_seed: crate::rng::derive_seed(seed, "seal/prf", 0),
            corr_cutoff: cfg.corr_cutoff,
            match_threshold: crate::watermark::reference::SEAL_THRESHOLD,
        })
    }

    pub fn patch_count(&self) -> usize {
        self.grid * self.grid
    }

    pub fn planes(&self) -> Vec<UnitVector> {
        self.hyperplanes
            .chunks_exact(self.embed_dim)
            .map(|c| UnitVector::normalize(c.to_vec()).expect("stored planes are unit vectors"))
            .collect()
    }

    pub fn bits(&self, embedding: &UnitVector) -> Result<Vec<bool>> {
        simhash(embedding, &self.planes())
    }

    /// Flat latent indices of patch `p`, channel-major then row-major.
    pub fn patch_indices(&self, p: usize) -> Vec<usize> {
        let (ph, pw) = (self.shape.height / self.grid, self.shape.width / self.grid);
        let (py, px) = (p / self.grid, p % self.grid);
        let mut out = Vec::with_capacity(self.shape.channels * ph * pw);
        for c in 0..self.shape.channels {
            for y in py * ph..(py + 1) * ph {
                for x in px * pw..(px + 1) * pw {
                    out.push((c * self.shape.height + y) * self.shape.width + x);
                }
            }
        }
        out
    }

    fn patch_noise(&self, p: usize, bit: bool, len: usize) -> Vec<f64> {
        let mut rng = derived_rng(self.prf_seed, "seal/patch", (p as u64) * 2 + u64::from(bit));
        standard_normal_f64(&mut rng, len)
    }

    /// The latent bound to `embedding`; embedding and reference use the same construction.
    pub fn reference(&self, embedding: &UnitVector) -> Result<LatentTensor> {
        let bits = self.bits(embedding)?;
        let mut data = vec![0.0f32; self.shape.len()];
        for (p, &bit) in bits.iter().enumerate() {
            let idx = self.patch_indices(p);
            for (i, v) in idx.iter().zip(self.patch_noise(p, bit, idx.len())) {
                data[*i] = v as f32;
            }
        }
        LatentTensor::new(self.shape, data)
    }

    pub fn embed(&self, semantic_embedding: &UnitVector) -> Result<LatentTensor> {
        self.reference(semantic_embedding)
    }

    pub fn match_count(&self, z_hat: &LatentTensor, image_embedding: &UnitVector) -> Result<usize> {
        z_hat.ensure_shape(self.shape)?;
        let reference = self.reference(image_embedding)?;
        let (a, b) = (z_hat.data(), reference.data());
        Ok((0..self.patch_count())
            .filter(|&p| {
                let idx = self.patch_indices(p);
                pearson(idx.iter().map(|&i| (a[i] as f64, b[i] as f64))) >= self.corr_cutoff
            })
            .count())
    }

    pub fn detect(&self, z_hat: &LatentTensor, image_embedding: &UnitVector) -> Result<DetectionOutcome> {
        let count = self.match_count(z_hat, image_embedding)?;
        Ok(DetectionOutcome::decide(Scheme::Seal, count as f64, self.match_threshold))
    }
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = pairs.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (sa, sb) = pairs.clone().fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a, sb + b));
    let (ma, mb) = (sa / n, sb / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derived_rng;
    use crate::tensor::sample_latent;
    use crate::watermark::simhash::hamming;

    fn key() -> SealKey {
        SealKey::generate(&SealConfig::default(), Shape::default(), 8).unwrap()
    }

    fn unit(seed: u64) -> UnitVector {
        UnitVector::normalize(standard_normal_f64(&mut derived_rng(seed, "e", 0), 64)).unwrap()
    }

    /// Unit vector at cosine `c` from `u`.
    fn at_cosine(u: &UnitVector, c: f64, seed: u64) -> UnitVector {
        let r = standard_normal_f64(&mut derived_rng(seed, "perp", 0), u.dim());
        let proj: f64 = r.iter().zip(u.values()).map(|(a, b)| a * b).sum();
        let perp = UnitVector::normalize(r.iter().zip(u.values()).map(|(a, b)| a - proj * b).collect()).unwrap();
        let s = (1.0 - c * c).sqrt();
        UnitVector::normalize(u.values().iter().zip(perp.values()).map(|(a, b)| c * a + s * b).collect()).unwrap()
    }

    #[test]
    fn patches_partition_the_latent() {
        let k = key();
        assert_eq!(k.patch_count(), 64);
        let mut seen = vec![0u8; k.shape.len()];
        for p in 0..k.patch_count() {
            let idx = k.patch_indices(p);
            assert_eq!(idx.len(), 64);
            for i in idx {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn self_detection_matches_every_patch() {
        let k = key();
        let e = unit(1);
        let z = k.embed(&e).unwrap();
        let o = k.detect(&z, &e).unwrap();
        assert_eq!(o.statistic, 64.0);
        assert!(o.detected);
    }

    #[test]
    fn mismatched_bits_lose_exactly_their_patches() {
        let k = key();
        for (i, c) in [0.99, 0.9, 0.7, 0.3, 0.0].into_iter().enumerate() {
            let e = unit(10 + i as u64);
            let e2 = at_cosine(&e, c, 20 + i as u64);
            let h = hamming(&k.bits(&e).unwrap(), &k.bits(&e2).unwrap());
            let z = k.embed(&e).unwrap();
            assert_eq!(k.match_count(&z, &e2).unwrap(), 64 - h, "cosine {c}");
        }
    }

    #[test]
    fn count_is_monotone_in_hamming_distance() {
        let k = key();
        let e = unit(3);
        let z = k.embed(&e).unwrap();
        let mut pts: Vec<(usize, usize)> = (0..40)
            .map(|i| {
                let e2 = at_cosine(&e, 1.0 - i as f64 / 20.0, 100 + i);
                let h = hamming(&k.bits(&e).unwrap(), &k.bits(&e2).unwrap());
                (h, k.match_count(&z, &e2).unwrap())
            })
            .collect();
        pts.sort();
        assert!(pts.windows(2).all(|w| w[1].1 <= w[0].1), "{pts:?}");
    }

    #[test]
    fn random_latents_rarely_match() {
        let k = key();
        let e = unit(4);
        let total: usize = (0..50)
            .map(|s| k.match_count(&sample_latent(s, k.shape).unwrap(), &e).unwrap())
            .sum();
        assert!(total <= 2, "{total}");
    }

    #[test]
    fn config_errors() {
        let bad = SealConfig {
            grid: 7,
            ..SealConfig::default()
        };
        assert!(SealKey::generate(&bad, Shape::default(), 1).is_err());
        let k = key();
        assert!(k.detect(&sample_latent(1, k.shape).unwrap(), &UnitVector::basis(8, 0)).is_err());
    }

    #[test]
    fn pearson_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(xs.iter().map(|&x| (x, 2.0 * x + 1.0))) - 1.0).abs() < 1e-12);
        assert!((pearson(xs.iter().map(|&x| (x, -x))) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(xs.iter().map(|&x| (x, 5.0))), 0.0);
    }
}
