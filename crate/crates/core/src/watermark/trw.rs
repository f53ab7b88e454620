//! Tree-Ring: concentric rings of fixed-magnitude Fourier coefficients
//! written into one channel of the initial noise.

use std::f64::consts::PI;

use rand::Rng as _;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed, standard_normal_f32};
use crate::tensor::{LatentTensor, Shape};
use crate::watermark::outcome::{DetectionOutcome, Scheme};
use crate::watermark::spectrum::{fft2, forward_real, signed_freq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrwConfig {
    pub channel: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub magnitude: f64,
}

impl Default for TrwConfig {
    fn default() -> Self {
        Self {
            channel: 0,
            inner_radius: 4.0,
            outer_radius: 10.0,
            magnitude: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrwKey {
    pub shape: Shape,
    pub channel: usize,
    /// Flat `y * W + x` spectrum indices on the canonical half-plane.
    pub ring_mask: Vec<usize>,
    /// `[re, im]` per masked index; partners carry the conjugate.
    pub pattern: Vec<[f64; 2]>,
    pub threshold: f64,
}

/// Canonical half-spectrum bins with `inner <= |f| <= outer`, excluding self-conjugate bins.
fn ring_bins(shape: Shape, inner: f64, outer: f64) -> Vec<(usize, f64)> {
    let (h, w) = (shape.height, shape.width);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (signed_freq(y, h), signed_freq(x, w));
            let canonical = fy > 0 || (fy == 0 && fx > 0);
            let partner = ((h - y) % h, (w - x) % w);
            if !canonical || partner == (y, x) {
                continue;
            }
            let r = ((fy * fy + fx * fx) as f64).sqrt();
            if r >= inner && r <= outer {
                out.push((y * w + x, r));
            }
        }
    }
    out
}

fn partner(idx: usize, shape: Shape) -> usize {
    let (h, w) = (shape.height, shape.width);
    let (y, x) = (idx / w, idx % w);
    ((h - y) % h) * w + (w - x) % w
}

impl TrwKey {
    pub fn generate(cfg: &TrwConfig, shape: Shape, seed: u64) -> Result<Self> {
        shape.validate()?;
        if cfg.channel >= shape.channels {
            return Err(Error::config(format!(
                "ring channel {} out of range for {} channels",
                cfg.channel, shape.channels
            )));
        }
        if !(cfg.inner_radius >= 0.0 && cfg.inner_radius <= cfg.outer_radius) {
            return Err(Error::config("ring radii must satisfy 0 <= inner <= outer"));
        }
        let bins = ring_bins(shape, cfg.inner_radius, cfg.outer_radius);
        if bins.is_empty() {
            return Err(Error::Empty("ring mask"));
        }
        // one phase per integer ring radius, shared by every bin of that ring
        let mut rng = derived_rng(seed, "trw/phases", 0);
        let max_ring = cfg.outer_radius.round() as usize + 1;
        let phases: Vec<f64> = (0..=max_ring).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let pattern = bins
            .iter()
            .map(|&(_, r)| {
                let c = Complex64::from_polar(cfg.magnitude, phases[r.round() as usize]);
                [c.re, c.im]
            })
            .collect();
        Ok(Self {
            shape,
            channel: cfg.channel,
            ring_mask: bins.into_iter().map(|(i, _)| i).collect(),
            pattern,
            threshold: crate::watermark::reference::TRW_IMPLIED_THRESHOLD,
        })
    }

    fn pattern_at(&self, k: usize) -> Complex64 {
        Complex64::new(self.pattern[k][0], self.pattern[k][1])
    }

    /// Writes the ring pattern into channel `self.channel` of `base`; returns the
    /// imaginary residue of the inverse transform alongside the patched latent.
    pub fn apply(&self, base: &LatentTensor) -> Result<(LatentTensor, f64)> {
        base.ensure_shape(self.shape)?;
        let (h, w) = (self.shape.height, self.shape.width);
        let mut spec = forward_real(base.channel(self.channel), h, w);
        for (k, &idx) in self.ring_mask.iter().enumerate() {
            let p = self.pattern_at(k);
            spec[idx] = p;
            spec[partner(idx, self.shape)] = p.conj();
        }
        fft2(&mut spec, h, w, true);
        let residue = spec.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        let mut data = base.data().to_vec();
        let plane = self.shape.plane();
        for (dst, c) in data[self.channel * plane..(self.channel + 1) * plane].iter_mut().zip(&spec) {
            *dst = c.re as f32;
        }
        Ok((LatentTensor::new(self.shape, data)?, residue))
    }

    /// Fresh Gaussian latent with the ring pattern overwritten.
    pub fn embed(&self, seed: u64) -> Result<LatentTensor> {
        let mut rng = rng_from_seed(seed);
        let base = LatentTensor::new(self.shape, standard_normal_f32(&mut rng, self.shape.len()))?;
        Ok(self.apply(&base)?.0)
    }

    /// Mean absolute difference between the masked coefficients of `z_hat` and the pattern.
    pub fn distance(&self, z_hat: &LatentTensor) -> Result<f64> {
        z_hat.ensure_shape(self.shape)?;
        if self.ring_mask.is_empty() {
            return Err(Error::Empty("ring mask"));
        }
        let spec = forward_real(z_hat.channel(self.channel), self.shape.height, self.shape.width);
        let total: f64 = self
            .ring_mask
            .iter()
            .enumerate()
            .map(|(k, &idx)| (spec[idx] - self.pattern_at(k)).norm())
            .sum();
        Ok(total / self.ring_mask.len() as f64)
    }

    pub fn detect(&self, z_hat: &LatentTensor) -> Result<DetectionOutcome> {
        Ok(DetectionOutcome::decide(Scheme::Trw, self.distance(z_hat)?, self.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_latent;

    fn key() -> TrwKey {
        TrwKey::generate(&TrwConfig::default(), Shape::default(), 3).unwrap()
    }

    #[test]
    fn mask_is_a_ring_on_the_half_plane() {
        let k = key();
        assert!(!k.ring_mask.is_empty());
        let shape = k.shape;
        for &idx in &k.ring_mask {
            let (y, x) = (idx / shape.width, idx % shape.width);
            let (fy, fx) = (signed_freq(y, shape.height), signed_freq(x, shape.width));
            let r = ((fy * fy + fx * fx) as f64).sqrt();
            assert!((4.0..=10.0).contains(&r));
            assert!(!k.ring_mask.contains(&partner(idx, shape)));
        }
        for p in &k.pattern {
            assert!((p[0].hypot(p[1]) - 30.0).abs() < 1e-9);
        }
    }

    #[test]
    fn patterned_spectrum_is_real() {
        let k = key();
        let (_, residue) = k.apply(&sample_latent(1, k.shape).unwrap()).unwrap();
        assert!(residue < 1e-5, "{residue}");
    }

    #[test]
    fn embedded_latent_has_zero_distance() {
        let k = key();
        let z = k.embed(11).unwrap();
        assert!(k.distance(&z).unwrap() < 1e-4);
        let other = k.embed(12).unwrap();
        assert!(other.max_abs_diff(&z).unwrap() > 0.0);
    }

    #[test]
    fn random_latents_are_far() {
        let k = key();
        for s in 0..20 {
            assert!(k.distance(&sample_latent(s, k.shape).unwrap()).unwrap() > 20.0);
        }
    }

    #[test]
    fn config_errors() {
        let bad = TrwConfig {
            inner_radius: 40.0,
            outer_radius: 50.0,
            ..TrwConfig::default()
        };
        assert!(matches!(TrwKey::generate(&bad, Shape::default(), 1), Err(Error::Empty(_))));
        let bad_channel = TrwConfig {
            channel: 9,
            ..TrwConfig::default()
        };
        assert!(TrwKey::generate(&bad_channel, Shape::default(), 1).is_err());
        let k = key();
        assert!(k.detect(&sample_latent(1, Shape::new(4, 16, 16)).unwrap()).is_err());
    }
}
