use crate::diffusion::{ddim_invert_with_noises, NoiseSource, StepNoises};
use crate::error::{Error, Result};
use crate::semantic::prompt::Prompt;
use crate::semantic::vector::{cosine, UnitVector};
use crate::tensor::LatentTensor;
use crate::world::World;

/// Initial latent and per-step noises recovered from an image.
#[derive(Debug, Clone, PartialEq)]
pub struct CopiedNoise {
    pub z_t: LatentTensor,
    pub step_noises: StepNoises,
}

/// Inverts `x0` under `cond`. Stochastic schedules need the true step noises.
pub fn extract_noise(world: &World, x0: &LatentTensor, cond: &UnitVector, known: Option<&StepNoises>) -> Result<CopiedNoise> {
    let steps = world.schedule().steps();
    let shape = world.shape();
    if world.schedule().eta() == 0.0 {
        return Ok(CopiedNoise {
            z_t: world.invert(x0, cond)?,
            step_noises: StepNoises::zeros(steps, shape),
        });
    }
    let noises = known.ok_or_else(|| {
        Error::config("noise extraction under eta > 0 requires the generating step noises")
    })?;
    let z_t = ddim_invert_with_noises(x0, cond.values(), world.schedule(), world.model(), noises)?;
    Ok(CopiedNoise {
        z_t,
        step_noises: noises.clone(),
    })
}

/// Regenerates from copied noise with a new prompt.
pub fn regenerate(world: &World, noise: &CopiedNoise, prompt: &Prompt) -> Result<LatentTensor> {
    let cond = world.embed_text(prompt)?;
    Ok(world.generate(&noise.z_t, &cond, NoiseSource::Copied(&noise.step_noises))?.0)
}

/// Cosine between an image's embedding and the embedding of a noise realization.
pub fn csw_score(world: &World, x: &LatentTensor, noise: &CopiedNoise) -> Result<f64> {
    let e = world.embed_noise(&noise.z_t, &noise.step_noises)?;
    cosine(&world.embed_image(x)?, &e)
}
