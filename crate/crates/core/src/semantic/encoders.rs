//! Mock text, image and noise encoders.
//!
//! Text uses bag-of-tokens feature hashing: each distinct token maps to a
//! pseudorandom Gaussian direction and the sum is normalized, so token order
//! and multiplicity are ignored. Latents are embedded by a fixed Gaussian
//! projection. The noise encoder projects the concatenation
//! `[z_T, eps_1, .., eps_T]` with the block matrix `[R | R_1 | .. | R_T]`,
//! whose `z_T` block `R` is the image projection itself, so an image and
//! the noise it was generated from land near each other.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::diffusion::StepNoises;
use crate::error::{Error, Result};
use crate::rng::{derived_rng, hash_str, standard_normal_f64};
use crate::semantic::prompt::Prompt;
use crate::semantic::vector::UnitVector;
use crate::tensor::{LatentTensor, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    dim: usize,
    seed: u64,
}

impl TextEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("text embedding dimension must be positive"));
        }
        Ok(Self { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_direction(&self, token: &str) -> Vec<f64> {
        let mut rng = derived_rng(hash_str(self.seed, token), "text/token", 0);
        standard_normal_f64(&mut rng, self.dim)
    }

    pub fn embed_tokens<'a, I>(&self, tokens: I) -> Result<UnitVector>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let distinct: BTreeSet<&str> = tokens.into_iter().collect();
        if distinct.is_empty() {
            return Err(Error::Empty("cannot embed an empty prompt"));
        }
        let mut acc = vec![0.0; self.dim];
        for tok in distinct {
            for (a, d) in acc.iter_mut().zip(self.token_direction(tok)) {
                *a += d;
            }
        }
        UnitVector::normalize(acc)
    }

    pub fn embed(&self, p: &Prompt) -> Result<UnitVector> {
        self.embed_tokens(p.tokens().iter().map(String::as_str))
    }
}

pub struct LatentEncoder {
    dim: usize,
    seed: u64,
    shape: Shape,
    image_proj: Vec<f64>,
    step_proj: Vec<OnceLock<Vec<f64>>>,
}

impl std::fmt::Debug for LatentEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatentEncoder")
            .field("dim", &self.dim)
            .field("seed", &self.seed)
            .field("shape", &self.shape)
            .field("steps", &self.step_proj.len())
            .finish()
    }
}

fn projection(seed: u64, label: &str, index: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = derived_rng(seed, label, index);
    standard_normal_f64(&mut rng, rows * cols)
}

fn project_into(acc: &mut [f64], proj: &[f64], x: &[f32]) {
    let cols = x.len();
    for (a, row) in acc.iter_mut().zip(proj.chunks_exact(cols)) {
        *a += row.iter().zip(x).map(|(p, &v)| p * v as f64).sum::<f64>();
    }
}

impl LatentEncoder {
    pub fn new(dim: usize, seed: u64, shape: Shape, steps: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("latent embedding dimension must be positive"));
        }
        shape.validate()?;
        Ok(Self {
            dim,
            seed,
            shape,
            image_proj: projection(seed, "latent/image", 0, dim, shape.len()),
            step_proj: (0..steps).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn embed_image(&self, x: &LatentTensor) -> Result<UnitVector> {
        x.ensure_shape(self.shape)?;
        let mut acc = vec![0.0; self.dim];
        project_into(&mut acc, &self.image_proj, x.data());
        UnitVector::normalize(acc).map_err(|e| match e {
            Error::ZeroNorm(_) => Error::ZeroNorm("embed_image"),
            other => other,
        })
    }

    fn step_projection(&self, t: usize) -> &[f64] {
        self.step_proj[t - 1].get_or_init(|| {
            projection(self.seed, "latent/step", t as u64, self.dim, self.shape.len())
        })
    }

    /// Embeds `[z_T, eps_1, .., eps_T]`.
    pub fn embed_noise(&self, z_t: &LatentTensor, steps: &StepNoises) -> Result<UnitVector> {
        z_t.ensure_shape(self.shape)?;
        if steps.len() != self.step_proj.len() {
            return Err(Error::config(format!(
                "noise encoder expects {} step noises, got {}",
                self.step_proj.len(),
                steps.len()
            )));
        }
        let mut acc = vec![0.0; self.dim];
        project_into(&mut acc, &self.image_proj, z_t.data());
        for (i, eps) in steps.iter().enumerate() {
            eps.ensure_shape(self.shape)?;
            // R_t * 0 = 0; skip materializing projections for zero noises
            if !eps.is_zero() {
                project_into(&mut acc, self.step_projection(i + 1), eps.data());
            }
        }
        UnitVector::normalize(acc).map_err(|e| match e {
            Error::ZeroNorm(_) => Error::ZeroNorm("embed_noise"),
            other => other,
        })
    }
}
