use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::noise::{regenerate, CopiedNoise};
use crate::error::{Error, Result};
use crate::semantic::caption::Captioner;
use crate::semantic::ledger::GenerationLedger;
use crate::semantic::prompt::{mask_anchors, AnchorSet, Prompt};
use crate::semantic::vector::{cosine, UnitVector};
use crate::tensor::LatentTensor;
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectStage {
    Text,
    Visual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Proposed,
    TextPassed,
    Regenerated,
    Accepted,
    Rejected { at: RejectStage, reason: String },
}

impl Stage {
    fn rejected(at: RejectStage, reason: impl Into<String>) -> Self {
        Stage::Rejected {
            at,
            reason: reason.into(),
        }
    }

    pub fn passed_text(&self) -> bool {
        !matches!(self, Stage::Proposed | Stage::Rejected { at: RejectStage::Text, .. })
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Stage::Accepted)
    }
}

/// A proposed prompt and every score computed for it so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    /// Position in the proposal pool.
    pub index: usize,
    pub prompt: Prompt,
    pub s_text: f64,
    #[serde(skip)]
    pub image: Option<LatentTensor>,
    /// Where the regenerated latent was written, if it was.
    #[serde(default)]
    pub image_path: Option<String>,
    pub vf_caption: Option<Prompt>,
    pub s_vis: Option<f64>,
    pub delta_csw: Option<f64>,
    pub rank_score: Option<f64>,
    pub stage: Stage,
}

impl ScoredCandidate {
    pub fn new(index: usize, prompt: Prompt) -> Self {
        Self {
            index,
            prompt,
            s_text: 0.0,
            image: None,
            image_path: None,
            vf_caption: None,
            s_vis: None,
            delta_csw: None,
            rank_score: None,
            stage: Stage::Proposed,
        }
    }
}

/// Embedding of the anchor-only projection of `p`; `None` when no anchor occurs.
fn anchor_embedding(world: &World, p: &Prompt, g: &AnchorSet) -> Result<Option<UnitVector>> {
    let masked = mask_anchors(p, g);
    if masked.is_empty() {
        return Ok(None);
    }
    world.text_encoder().embed_tokens(masked.tokens().iter().map(String::as_str)).map(Some)
}

fn anchor_similarity(world: &World, reference: &UnitVector, p: &Prompt, g: &AnchorSet) -> Result<f64> {
    match anchor_embedding(world, p, g)? {
        Some(e) => cosine(reference, &e),
        None => Ok(0.0),
    }
}

fn reference_embedding(world: &World, t0: &Prompt, g: &AnchorSet) -> Result<UnitVector> {
    anchor_embedding(world, t0, g)?
        .ok_or_else(|| Error::config(format!("no anchor occurs in the original caption {:?}", t0.text())))
}

/// Scores anchor drift; candidates with `s_text >= tau_text` advance.
pub fn filter_text(world: &World, pool: &[Prompt], t0: &Prompt, g: &AnchorSet, tau_text: f64) -> Result<Vec<ScoredCandidate>> {
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let reference = reference_embedding(world, t0, g)?;
    pool.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut c = ScoredCandidate::new(i, p.clone());
            c.s_text = anchor_similarity(world, &reference, p, g)?;
            c.stage = if c.s_text >= tau_text {
                Stage::TextPassed
            } else {
                Stage::rejected(RejectStage::Text, format!("s_text {:.4} < {tau_text}", c.s_text))
            };
            Ok(c)
        })
        .collect()
}

/// Providers and bookkeeping used by the visual stage.
pub struct VisualContext<'a> {
    pub world: &'a World,
    pub captioner: &'a dyn Captioner,
    pub ledger: &'a GenerationLedger,
    /// Seed recorded with each regeneration in the ledger.
    pub seed: u64,
}

/// Regenerates text-passed candidates from the copied noise, captions them
/// and applies the anchor and noise-consistency checks. Other candidates
/// pass through untouched; output order equals input order.
pub fn filter_visual(
    ctx: &VisualContext<'_>,
    cands: Vec<ScoredCandidate>,
    noise: &CopiedNoise,
    t0: &Prompt,
    g: &AnchorSet,
    tau_vis: f64,
    tau_csw: f64,
) -> Result<Vec<ScoredCandidate>> {
    let world = ctx.world;
    let reference = reference_embedding(world, t0, g)?;
    let noise_embedding = world.embed_noise(&noise.z_t, &noise.step_noises)?;
    cands
        .into_par_iter()
        .map(|mut c| {
            if c.stage != Stage::TextPassed {
                return Ok(c);
            }
            let x = regenerate(world, noise, &c.prompt)?;
            ctx.ledger.register(&x, c.prompt.raw(), ctx.seed, None);
            let csw = cosine(&world.embed_image(&x)?, &noise_embedding)?;
            c.delta_csw = Some(1.0 - csw);
            c.image = Some(x);
            c.stage = Stage::Regenerated;
            let caption = match ctx.captioner.caption(c.image.as_ref().expect("set above")) {
                Ok(cap) => cap,
                Err(e) => {
                    log::warn!("caption failed for candidate {}: {e}", c.index);
                    c.stage = Stage::rejected(RejectStage::Visual, format!("caption-error: {e}"));
                    return Ok(c);
                }
            };
            let s_vis = anchor_similarity(world, &reference, &caption, g)?;
            c.s_vis = Some(s_vis);
            c.vf_caption = Some(caption);
            let d = 1.0 - csw;
            c.stage = if s_vis < tau_vis {
                Stage::rejected(RejectStage::Visual, format!("s_vis {s_vis:.4} < {tau_vis}"))
            } else if d > tau_csw {
                Stage::rejected(RejectStage::Visual, format!("delta_csw {d:.4} > {tau_csw}"))
            } else {
                Stage::Accepted
            };
            Ok(c)
        })
        .collect()
}
