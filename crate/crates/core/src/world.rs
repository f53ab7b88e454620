//! The diffusion world: schedule, denoiser and encoders built from one config.

use serde::{Deserialize, Serialize};

use crate::diffusion::{ddim_generate, ddim_invert, make_schedule, DenoiserModel, NoiseSchedule, NoiseSource, StepNoises};
use crate::error::{Error, Result};
use crate::semantic::encoders::{LatentEncoder, TextEncoder};
use crate::semantic::prompt::Prompt;
use crate::semantic::vector::UnitVector;
use crate::tensor::{LatentTensor, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub shape: [usize; 3],
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Dimension of text embeddings and of the denoiser's conditioning input.
    pub cond_dim: usize,
    /// Dimension of image/noise embeddings.
    pub embed_dim: usize,
    pub model_seed: u64,
    pub encoder_seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            shape: [4, 32, 32],
            steps: 10,
            beta_min: 1e-4,
            beta_max: 0.02,
            eta: 0.0,
            gamma: 0.1,
            cond_dim: 64,
            embed_dim: 64,
            model_seed: 0x5eed_d1ff,
            encoder_seed: 0xe4c0_de55,
        }
    }
}

impl DiffusionConfig {
    pub fn shape(&self) -> Shape {
        Shape::new(self.shape[0], self.shape[1], self.shape[2])
    }
}

#[derive(Debug)]
pub struct World {
    config: DiffusionConfig,
    schedule: NoiseSchedule,
    model: DenoiserModel,
    text: TextEncoder,
    latent: LatentEncoder,
}

impl World {
    pub fn new(config: DiffusionConfig) -> Result<Self> {
        let shape = config.shape();
        shape.validate()?;
        let schedule = make_schedule(config.steps, config.beta_min, config.beta_max, config.eta)?;
        let model = DenoiserModel::new(config.model_seed, config.gamma, config.cond_dim, shape, &schedule)?;
        let text = TextEncoder::new(config.cond_dim, config.encoder_seed)?;
        let latent = LatentEncoder::new(config.embed_dim, config.encoder_seed, shape, config.steps)?;
        Ok(Self {
            config,
            schedule,
            model,
            text,
            latent,
        })
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    pub fn shape(&self) -> Shape {
        self.model.shape()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn model(&self) -> &DenoiserModel {
        &self.model
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn latent_encoder(&self) -> &LatentEncoder {
        &self.latent
    }

    pub fn embed_text(&self, p: &Prompt) -> Result<UnitVector> {
        self.text.embed(p)
    }

    pub fn embed_image(&self, x: &LatentTensor) -> Result<UnitVector> {
        self.latent.embed_image(x)
    }

    pub fn embed_noise(&self, z_t: &LatentTensor, steps: &StepNoises) -> Result<UnitVector> {
        self.latent.embed_noise(z_t, steps)
    }

    pub fn generate(&self, z_t: &LatentTensor, cond: &UnitVector, noise: NoiseSource<'_>) -> Result<(LatentTensor, StepNoises)> {
        ddim_generate(z_t, cond.values(), &self.schedule, &self.model, noise)
    }

    /// Deterministic inversion; with `eta > 0` this inverts the `eta = 0` chain.
    pub fn invert(&self, x: &LatentTensor, cond: &UnitVector) -> Result<LatentTensor> {
        if cond.dim() != self.model.cond_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.cond_dim(),
                actual: cond.dim(),
            });
        }
        ddim_invert(x, cond.values(), &self.schedule.deterministic(), &self.model)
    }
}
