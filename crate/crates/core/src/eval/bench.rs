use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run_csi, run_rpm, AttackConfig, AttackKind, AttackResult, Attacker};
use crate::corpus::Corpus;
use crate::diffusion::NoiseSource;
use crate::error::{Error, Result};
use crate::eval::frechet::frechet_distance;
use crate::eval::report::{EvaluationReport, FrechetEntry, ReportRow};
use crate::eval::stats::{asr, detection_stats, TrialRecord};
use crate::rng::derive_seed;
use crate::semantic::caption::{Captioner, MockCaptioner};
use crate::semantic::ledger::GenerationLedger;
use crate::semantic::propose::{MockProposer, Proposer};
use crate::semantic::vector::UnitVector;
use crate::tensor::LatentTensor;
use crate::watermark::key::{keygen, SchemeConfig, WatermarkKey};
use crate::watermark::outcome::{DetectionOutcome, Scheme};
use crate::world::{DiffusionConfig, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub schemes: Vec<Scheme>,
    pub attacks: Vec<AttackKind>,
    pub n_images: usize,
    pub seed: u64,
    pub diffusion: DiffusionConfig,
    pub watermark: SchemeConfig,
    pub attack: AttackConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            attacks: AttackKind::ALL.to_vec(),
            n_images: 50,
            seed: 0,
            diffusion: DiffusionConfig::default(),
            watermark: SchemeConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::config("n_images must be at least 1"));
        }
        if self.schemes.is_empty() || self.attacks.is_empty() {
            return Err(Error::config("at least one scheme and one attack are required"));
        }
        self.watermark.calibration.validate()?;
        self.attack.validate()
    }
}

/// Captioner, proposer and the ledger that records every generated latent.
#[derive(Clone)]
pub struct Providers {
    pub captioner: Arc<dyn Captioner>,
    pub proposer: Arc<dyn Proposer>,
    pub ledger: Arc<GenerationLedger>,
}

impl Providers {
    pub fn mock(seed: u64) -> Self {
        Self::mock_with_ledger(seed, Arc::new(GenerationLedger::new()))
    }

    pub fn mock_with_ledger(seed: u64, ledger: Arc<GenerationLedger>) -> Self {
        Self {
            captioner: Arc::new(MockCaptioner::new(ledger.clone()).with_seed(seed)),
            proposer: Arc::new(MockProposer::bundled(seed)),
            ledger,
        }
    }
}

/// Caption-conditioned inversion followed by the scheme's detector. The
/// caption's text embedding is the semantic input for content-aware schemes.
pub fn detect_image(world: &World, key: &WatermarkKey, captioner: &dyn Captioner, x: &LatentTensor) -> Result<DetectionOutcome> {
    let caption = captioner.caption(x)?;
    let e = world.embed_text(&caption)?;
    let z_hat = world.invert(x, &e)?;
    key.detect(&z_hat, &e)
}

struct Trial {
    records: Vec<TrialRecord>,
    original: UnitVector,
    csi: Option<UnitVector>,
    rpm: Option<UnitVector>,
}

struct Context<'a> {
    cfg: &'a BenchConfig,
    world: &'a World,
    corpus: &'a Corpus,
    providers: &'a Providers,
}

impl Context<'_> {
    fn trial(&self, scheme: Scheme, key: &WatermarkKey, i: usize) -> Result<Trial> {
        let (world, p) = (self.world, self.providers);
        let entry = self.corpus.cycle(i);
        let image_seed = derive_seed(self.cfg.seed, "bench/image", i as u64);
        let cond = world.embed_text(&entry.prompt)?;
        let z = key.embed(image_seed, &cond)?;
        let (x0, _) = world.generate(&z, &cond, NoiseSource::Fresh(image_seed))?;
        p.ledger.register(&x0, entry.prompt.raw(), image_seed, None);

        let target = entry.intent.target_attribute.as_str();
        let record = |attack, detection: Option<DetectionOutcome>, injected| TrialRecord {
            scheme,
            attack,
            image_id: i,
            detection,
            injection_success: injected,
            seed: image_seed,
        };
        let attacker = Attacker {
            world,
            captioner: p.captioner.as_ref(),
            proposer: p.proposer.as_ref(),
            ledger: &p.ledger,
            config: AttackConfig {
                seed: derive_seed(self.cfg.seed, &format!("bench/attack/{scheme}"), i as u64),
                ..self.cfg.attack.clone()
            },
        };
        let mut trial = Trial {
            records: Vec::new(),
            original: world.embed_image(&x0)?,
            csi: None,
            rpm: None,
        };
        for &attack in &self.cfg.attacks {
            let attacked: Option<(LatentTensor, bool)> = match attack {
                AttackKind::None => {
                    let caption = p.captioner.caption(&x0)?;
                    Some((x0.clone(), caption.contains(target)))
                }
                AttackKind::Csi => {
                    let t0 = p.captioner.caption(&x0)?;
                    match run_csi(&attacker, &x0, &t0, &entry.anchors, &entry.intent) {
                        Ok(r) => top_image(&r, target),
                        Err(e) if e.is_config() => {
                            log::warn!("csi on image {i} ({scheme}) skipped: {e}");
                            None
                        }
                        Err(e) => return Err(e),
                    }
                }
                AttackKind::Rpm => top_image(&run_rpm(&attacker, &x0)?, target),
            };
            let rec = match &attacked {
                Some((x, injected)) => record(attack, Some(detect_image(world, key, p.captioner.as_ref(), x)?), *injected),
                None => record(attack, None, false),
            };
            match (attack, &attacked) {
                (AttackKind::Csi, Some((x, _))) => trial.csi = Some(world.embed_image(x)?),
                (AttackKind::Rpm, Some((x, _))) => trial.rpm = Some(world.embed_image(x)?),
                _ => {}
            }
            trial.records.push(rec);
        }
        Ok(trial)
    }
}

fn top_image(r: &AttackResult, target: &str) -> Option<(LatentTensor, bool)> {
    let top = r.top()?;
    let injected = top.vf_caption.as_ref().is_some_and(|c| c.contains(target));
    top.image.clone().map(|x| (x, injected))
}

fn frechet_entries(scope: &str, original: &[UnitVector], csi: &[UnitVector], rpm: &[UnitVector], out: &mut Vec<FrechetEntry>) -> Result<()> {
    let sets = [("original", original), ("csi", csi), ("rpm", rpm)];
    for (i, (na, a)) in sets.iter().enumerate() {
        for (nb, b) in &sets[i + 1..] {
            if a.len() < 2 || b.len() < 2 {
                continue;
            }
            out.push(FrechetEntry {
                scope: scope.to_string(),
                set_a: na.to_string(),
                set_b: nb.to_string(),
                n_a: a.len(),
                n_b: b.len(),
                distance: frechet_distance(a, b)?,
            });
        }
    }
    Ok(())
}

/// Generates `n_images` watermarked images per scheme, attacks each with every
/// configured attack and aggregates detection outcomes. Deterministic for a
/// fixed configuration.
pub fn run_benchmark(cfg: &BenchConfig, providers: &Providers) -> Result<EvaluationReport> {
    cfg.validate()?;
    let world = World::new(cfg.diffusion.clone())?;
    let corpus = Corpus::bundled();
    let ctx = Context {
        cfg,
        world: &world,
        corpus: &corpus,
        providers,
    };
    let mut rows = Vec::new();
    let mut frechet = Vec::new();
    let mut records = Vec::new();
    let (mut all_orig, mut all_csi, mut all_rpm) = (Vec::new(), Vec::new(), Vec::new());
    for &scheme in &cfg.schemes {
        let key_seed = derive_seed(cfg.seed, &format!("bench/key/{scheme}"), 0);
        let key = keygen(scheme, &cfg.watermark, world.shape(), key_seed)?.key;
        let trials: Vec<Trial> = (0..cfg.n_images)
            .into_par_iter()
            .map(|i| ctx.trial(scheme, &key, i))
            .collect::<Result<_>>()?;
        let scheme_records: Vec<TrialRecord> = trials.iter().flat_map(|t| t.records.iter().cloned()).collect();
        for &attack in &cfg.attacks {
            let rs: Vec<TrialRecord> = scheme_records.iter().filter(|r| r.attack == attack).cloned().collect();
            let stats = detection_stats(&rs).ok();
            rows.push(ReportRow {
                scheme,
                attack,
                n: rs.len(),
                asr: asr(&rs)?,
                stat_mean: stats.map(|s| s.mean),
                stat_min: stats.map(|s| s.min),
                stat_max: stats.map(|s| s.max),
                threshold: key.threshold(),
                margin: stats.map(|s| s.margin),
                injection_rate: rs.iter().filter(|r| r.injection_success).count() as f64 / rs.len() as f64,
            });
        }
        let orig: Vec<UnitVector> = trials.iter().map(|t| t.original.clone()).collect();
        let csi: Vec<UnitVector> = trials.iter().filter_map(|t| t.csi.clone()).collect();
        let rpm: Vec<UnitVector> = trials.iter().filter_map(|t| t.rpm.clone()).collect();
        frechet_entries(scheme.as_str(), &orig, &csi, &rpm, &mut frechet)?;
        all_orig.extend(orig);
        all_csi.extend(csi);
        all_rpm.extend(rpm);
        records.extend(scheme_records);
    }
    if cfg.schemes.len() > 1 {
        frechet_entries("pooled", &all_orig, &all_csi, &all_rpm, &mut frechet)?;
    }
    Ok(EvaluationReport {
        config: cfg.clone(),
        rows,
        frechet,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(schemes: Vec<Scheme>, attacks: Vec<AttackKind>, n: usize) -> BenchConfig {
        let mut c = BenchConfig {
            schemes,
            attacks,
            n_images: n,
            ..BenchConfig::default()
        };
        c.watermark.calibration.n_null = 200;
        c
    }

    #[test]
    fn single_image_csi_against_gsw() {
        let r = run_benchmark(&cfg(vec![Scheme::Gsw], vec![AttackKind::Csi], 1), &Providers::mock(0)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].asr, 1.0);
    }

    #[test]
    fn unattacked_images_are_detected() {
        let r = run_benchmark(&cfg(Scheme::ALL.to_vec(), vec![AttackKind::None], 1), &Providers::mock(0)).unwrap();
        for row in &r.rows {
            assert_eq!(row.asr, 1.0, "{:?}", row.scheme);
        }
    }

    #[test]
    fn rejects_empty_runs() {
        assert!(run_benchmark(&cfg(vec![Scheme::Gsw], vec![AttackKind::Csi], 0), &Providers::mock(0))
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn reproducible_including_frechet() {
        let c = cfg(vec![Scheme::Seal], AttackKind::ALL.to_vec(), 4);
        let a = run_benchmark(&c, &Providers::mock(1)).unwrap();
        let b = run_benchmark(&c, &Providers::mock(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 12);
        assert!(!a.frechet.is_empty());
    }
}
