use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attack::filter::{filter_text, filter_visual, ScoredCandidate, Stage, VisualContext};
use crate::attack::noise::{csw_score, extract_noise};
use crate::attack::rank::rank_candidates;
use crate::diffusion::NoiseSource;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::semantic::caption::Captioner;
use crate::semantic::ledger::{latent_digest, GenerationLedger};
use crate::semantic::prompt::{AnchorSet, AttackIntent, Prompt};
use crate::semantic::propose::Proposer;
use crate::tensor::{sample_latent, LatentTensor};
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub tau_text: f64,
    pub tau_vis: f64,
    pub tau_csw: f64,
    pub lambda_anc: f64,
    pub lambda_attr: f64,
    pub m_candidates: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            tau_text: 0.85,
            tau_vis: 0.80,
            tau_csw: 0.35,
            lambda_anc: 1.0,
            lambda_attr: 1.0,
            m_candidates: 16,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo, hi) in [
            ("tau_text", self.tau_text, -1.0, 1.0),
            ("tau_vis", self.tau_vis, -1.0, 1.0),
            ("tau_csw", self.tau_csw, 0.0, 2.0),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::config(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        for (name, v) in [("lambda_anc", self.lambda_anc), ("lambda_attr", self.lambda_attr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    /// No attack: the watermarked image itself.
    None,
    Csi,
    Rpm,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::None, AttackKind::Csi, AttackKind::Rpm];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Csi => "csi",
            AttackKind::Rpm => "rpm",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AttackKind::None),
            "csi" => Ok(AttackKind::Csi),
            "rpm" => Ok(AttackKind::Rpm),
            other => Err(Error::config(format!("unknown attack {other:?} (expected none, csi or rpm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub proposed: usize,
    pub text_passed: usize,
    pub regenerated: usize,
    pub accepted: usize,
}

impl StageCounts {
    pub fn of(cands: &[ScoredCandidate]) -> Self {
        Self {
            proposed: cands.len(),
            text_passed: cands.iter().filter(|c| c.stage.passed_text()).count(),
            regenerated: cands.iter().filter(|c| c.image.is_some() || c.image_path.is_some()).count(),
            accepted: cands.iter().filter(|c| c.stage.is_accepted()).count(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.accepted <= self.regenerated && self.regenerated <= self.text_passed && self.text_passed <= self.proposed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub attack: AttackKind,
    /// Caption of the attacked image.
    pub t0: Prompt,
    /// Digest of the attacked image's latent.
    pub original_digest: String,
    /// All candidates in pool order.
    pub candidates: Vec<ScoredCandidate>,
    /// Pool indices of accepted candidates, best first.
    pub accepted: Vec<usize>,
    pub counts: StageCounts,
}

impl AttackResult {
    pub fn top(&self) -> Option<&ScoredCandidate> {
        self.accepted.first().map(|&i| &self.candidates[i])
    }

    pub fn accepted_candidates(&self) -> impl Iterator<Item = &ScoredCandidate> {
        self.accepted.iter().map(|&i| &self.candidates[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Diffusion world, providers and thresholds for one attack run.
pub struct Attacker<'a> {
    pub world: &'a World,
    pub captioner: &'a dyn Captioner,
    pub proposer: &'a dyn Proposer,
    /// Receives every regenerated latent so the captioner can describe it.
    pub ledger: &'a GenerationLedger,
    pub config: AttackConfig,
}

/// Full CSI cascade on `x0` whose caption is `t0`. An empty accepted set is a
/// failed attack, not an error.
pub fn run_csi(a: &Attacker<'_>, x0: &LatentTensor, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent) -> Result<AttackResult> {
    let cfg = &a.config;
    cfg.validate()?;
    intent.validate(g)?;
    if !g.all_in(t0) {
        let missing: Vec<&str> = g.iter().filter(|t| !t0.contains(t)).collect();
        return Err(Error::config(format!("anchors {missing:?} do not occur in the caption {:?}", t0.text())));
    }
    let mut result = AttackResult {
        attack: AttackKind::Csi,
        t0: t0.clone(),
        original_digest: latent_digest(x0),
        candidates: Vec::new(),
        accepted: Vec::new(),
        counts: StageCounts::default(),
    };
    let cond = a.world.embed_text(t0)?;
    let noise = extract_noise(a.world, x0, &cond, None)?;
    if cfg.m_candidates == 0 {
        return Ok(result);
    }
    let pool = a.proposer.propose(t0, g, intent, cfg.m_candidates)?;
    if pool.is_empty() {
        return Ok(result);
    }
    let texted = filter_text(a.world, &pool, t0, g, cfg.tau_text)?;
    let ctx = VisualContext {
        world: a.world,
        captioner: a.captioner,
        ledger: a.ledger,
        seed: cfg.seed,
    };
    let mut cands = filter_visual(&ctx, texted, &noise, t0, g, cfg.tau_vis, cfg.tau_csw)?;
    let accepted: Vec<ScoredCandidate> = cands.iter().filter(|c| c.stage.is_accepted()).cloned().collect();
    let ranked = rank_candidates(a.world, accepted, intent, cfg.lambda_anc, cfg.lambda_attr)?;
    for r in &ranked {
        cands[r.index].rank_score = r.rank_score;
    }
    result.accepted = ranked.iter().map(|c| c.index).collect();
    result.counts = StageCounts::of(&cands);
    result.candidates = cands;
    Ok(result)
}

/// Captions `x0` and regenerates from fresh noise with the caption as prompt.
/// The single output is recorded as accepted; no filter is applied.
pub fn run_rpm(a: &Attacker<'_>, x0: &LatentTensor) -> Result<AttackResult> {
    let world = a.world;
    let seed = a.config.seed;
    let t0 = a.captioner.caption(x0)?;
    let cond = world.embed_text(&t0)?;
    let z_t = sample_latent(derive_seed(seed, "rpm/z_t", 0), world.shape())?;
    let (x, _) = world.generate(&z_t, &cond, NoiseSource::Fresh(derive_seed(seed, "rpm/steps", 0)))?;
    a.ledger.register(&x, t0.raw(), seed, None);

    let mut c = ScoredCandidate::new(0, t0.clone());
    c.s_text = 1.0;
    // consistency against the original's noise is informative only; stochastic
    // schedules without known noises leave it unset
    c.delta_csw = match extract_noise(world, x0, &cond, None) {
        Ok(n) => Some(1.0 - csw_score(world, &x, &n)?),
        Err(e) if e.is_config() => None,
        Err(e) => return Err(e),
    };
    c.vf_caption = Some(a.captioner.caption(&x)?);
    c.image = Some(x);
    c.stage = Stage::Accepted;
    let cands = vec![c];
    Ok(AttackResult {
        attack: AttackKind::Rpm,
        t0,
        original_digest: latent_digest(x0),
        counts: StageCounts::of(&cands),
        candidates: cands,
        accepted: vec![0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::noise::regenerate;
    use crate::semantic::caption::MockCaptioner;
    use crate::semantic::propose::MockProposer;
    use crate::watermark::gsw::GswKey;

    struct Setup {
        world: World,
        ledger: std::sync::Arc<GenerationLedger>,
        x0: LatentTensor,
        t0: Prompt,
    }

    fn setup(seed: u64) -> Setup {
        let world = World::new(Default::default()).unwrap();
        let ledger = std::sync::Arc::new(GenerationLedger::new());
        let t0 = Prompt::new("a red fox running through a snowy forest").unwrap();
        let key = GswKey::generate(64, world.shape(), 1).unwrap();
        let z = key.embed(seed).unwrap();
        let (x0, _) = world.generate(&z, &world.embed_text(&t0).unwrap(), NoiseSource::Fresh(0)).unwrap();
        ledger.register(&x0, t0.raw(), seed, None);
        Setup { world, ledger, x0, t0 }
    }

    fn run(s: &Setup, cfg: AttackConfig, captioner: &dyn Captioner) -> AttackResult {
        let proposer = MockProposer::bundled(3);
        let a = Attacker {
            world: &s.world,
            captioner,
            proposer: &proposer,
            ledger: &s.ledger,
            config: cfg,
        };
        let g = AnchorSet::parse("fox,forest").unwrap();
        run_csi(&a, &s.x0, &s.t0, &g, &AttackIntent::new("blue", Some("red"))).unwrap()
    }

    #[test]
    fn end_to_end_mock_run_injects_and_keeps_anchors() {
        let s = setup(10);
        let cap = MockCaptioner::new(s.ledger.clone());
        let r = run(&s, AttackConfig::default(), &cap);
        assert!(!r.accepted.is_empty());
        assert!(r.counts.is_monotone());
        assert_eq!(r.counts.proposed, 16);
        for c in r.accepted_candidates() {
            let cap = c.vf_caption.as_ref().unwrap();
            assert!(cap.contains("fox") && cap.contains("forest") && cap.contains("blue"));
        }
        let scores: Vec<f64> = r.accepted_candidates().map(|c| c.rank_score.unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_pool_is_an_empty_result() {
        let s = setup(11);
        let cap = MockCaptioner::new(s.ledger.clone());
        let r = run(
            &s,
            AttackConfig {
                m_candidates: 0,
                ..AttackConfig::default()
            },
            &cap,
        );
        assert_eq!(r.counts, StageCounts::default());
        assert!(r.top().is_none());
    }

    #[test]
    fn repeated_runs_are_identical() {
        let s = setup(12);
        let cap = MockCaptioner::new(s.ledger.clone());
        let a = run(&s, AttackConfig::default(), &cap);
        let b = run(&s, AttackConfig::default(), &cap);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back: AttackResult = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
    }

    #[test]
    fn anchors_missing_from_caption_is_a_config_error() {
        let s = setup(13);
        let cap = MockCaptioner::new(s.ledger.clone());
        let proposer = MockProposer::bundled(3);
        let a = Attacker {
            world: &s.world,
            captioner: &cap,
            proposer: &proposer,
            ledger: &s.ledger,
            config: AttackConfig::default(),
        };
        let g = AnchorSet::parse("whale").unwrap();
        let err = run_csi(&a, &s.x0, &s.t0, &g, &AttackIntent::new("blue", None)).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn invalid_thresholds() {
        for cfg in [
            AttackConfig {
                tau_text: 1.5,
                ..Default::default()
            },
            AttackConfig {
                tau_csw: -0.1,
                ..Default::default()
            },
            AttackConfig {
                lambda_anc: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn rpm_uses_fresh_noise() {
        let mut differ = 0;
        let mut copied_wins = 0;
        let world = World::new(Default::default()).unwrap();
        let t0 = Prompt::new("a red fox running through a snowy forest").unwrap();
        let cond = world.embed_text(&t0).unwrap();
        for seed in 0..100u64 {
            let ledger = GenerationLedger::new();
            let z = sample_latent(derive_seed(seed, "test/z", 0), world.shape()).unwrap();
            let (x0, _) = world.generate(&z, &cond, NoiseSource::Fresh(0)).unwrap();
            ledger.register(&x0, t0.raw(), seed, None);
            let cap = MockCaptioner::new(std::sync::Arc::new(ledger));
            let proposer = MockProposer::bundled(0);
            let a = Attacker {
                world: &world,
                captioner: &cap,
                proposer: &proposer,
                ledger: cap.ledger(),
                config: AttackConfig {
                    seed,
                    ..Default::default()
                },
            };
            let r = run_rpm(&a, &x0).unwrap();
            assert_eq!(r.counts.proposed, 1);
            let x = r.top().unwrap().image.as_ref().unwrap();
            let cos = crate::semantic::vector::cosine(&world.embed_image(x).unwrap(), &world.embed_image(&x0).unwrap()).unwrap();
            if cos < 0.99 {
                differ += 1;
            }
            let n = extract_noise(&world, &x0, &cond, None).unwrap();
            let copied = regenerate(&world, &n, &Prompt::new("a blue fox running through a snowy forest").unwrap()).unwrap();
            if csw_score(&world, x, &n).unwrap() < csw_score(&world, &copied, &n).unwrap() {
                copied_wins += 1;
            }
            if seed == 0 {
                let again = run_rpm(&a, &x0).unwrap();
                assert_eq!(again.top().unwrap().image, r.top().unwrap().image);
            }
        }
        assert!(differ >= 95, "{differ}");
        assert!(copied_wins > 50, "{copied_wins}");
    }
}
