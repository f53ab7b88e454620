use std::collections::BTreeSet;
use std::sync::Arc;

use csi_core::attack::{run_csi, AttackConfig, AttackResult, Attacker};
use csi_core::diffusion::NoiseSource;
use csi_core::semantic::{AnchorSet, AttackIntent, GenerationLedger, MockCaptioner, MockProposer, Prompt, Proposer};
use csi_core::tensor::sample_latent;
use csi_core::world::World;
use csi_core::{LatentTensor, Result};
use proptest::prelude::*;

/// Mock pool plus a few prompts that lose one or both anchors.
struct Mixed(MockProposer);

impl Proposer for Mixed {
    fn propose(&self, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent, m: usize) -> Result<Vec<Prompt>> {
        let mut pool = self.0.propose(t0, g, intent, m)?;
        for extra in ["a blue fox running through a snowy field", "a blue cat on a sofa", "the fox and the forest and the moon"] {
            pool.push(Prompt::new(extra)?);
        }
        Ok(pool)
    }
}

struct Bench {
    world: World,
    ledger: Arc<GenerationLedger>,
    x0: LatentTensor,
    t0: Prompt,
}

fn bench() -> Bench {
    let world = World::new(Default::default()).unwrap();
    let ledger = Arc::new(GenerationLedger::new());
    let t0 = Prompt::new("a red fox running through a snowy forest").unwrap();
    let z = sample_latent(77, world.shape()).unwrap();
    let (x0, _) = world.generate(&z, &world.embed_text(&t0).unwrap(), NoiseSource::Fresh(0)).unwrap();
    ledger.register(&x0, t0.raw(), 77, None);
    Bench { world, ledger, x0, t0 }
}

fn attack(b: &Bench, cfg: AttackConfig) -> AttackResult {
    // partial dropout spreads s_vis over several values
    let captioner = MockCaptioner::new(b.ledger.clone()).with_dropout(0.35, ["blue"]).unwrap();
    let proposer = Mixed(MockProposer::bundled(5));
    let a = Attacker {
        world: &b.world,
        captioner: &captioner,
        proposer: &proposer,
        ledger: &b.ledger,
        config: cfg,
    };
    let g = AnchorSet::parse("fox,forest").unwrap();
    run_csi(&a, &b.x0, &b.t0, &g, &AttackIntent::new("blue", Some("red"))).unwrap()
}

fn accepted(r: &AttackResult) -> BTreeSet<usize> {
    r.accepted.iter().copied().collect()
}

#[test]
fn cascade_sets_are_nested() {
    let b = bench();
    let r = attack(&b, AttackConfig::default());
    assert!(r.counts.is_monotone());
    for c in &r.candidates {
        if c.stage.is_accepted() {
            assert!(c.image.is_some() && c.stage.passed_text());
        }
        if c.image.is_some() {
            assert!(c.stage.passed_text());
        }
    }
    assert!(r.counts.text_passed < r.counts.proposed);
}

#[test]
fn default_run_has_mixed_outcomes() {
    let b = bench();
    let r = attack(&b, AttackConfig::default());
    assert!(r.counts.accepted > 0);
    assert!(r.counts.accepted < r.counts.regenerated, "{:?}", r.counts);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn tightening_never_grows_the_accepted_set(
        tt in 0.0f64..1.0, tv in 0.0f64..1.0, tc in 0.0f64..0.0012,
        dt in 0.0f64..0.5, dv in 0.0f64..0.5, dc in 0.0f64..0.0005,
    ) {
        let b = bench();
        let base = AttackConfig { tau_text: tt, tau_vis: tv, tau_csw: tc + dc, ..Default::default() };
        let loose = accepted(&attack(&b, base.clone()));
        for tight in [
            AttackConfig { tau_text: (tt + dt).min(1.0), ..base.clone() },
            AttackConfig { tau_vis: (tv + dv).min(1.0), ..base.clone() },
            AttackConfig { tau_csw: tc, ..base.clone() },
        ] {
            let r = attack(&b, tight);
            prop_assert!(r.counts.is_monotone());
            prop_assert!(accepted(&r).is_subset(&loose));
        }
    }
}
