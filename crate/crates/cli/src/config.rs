use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use csi_core::attack::{AttackConfig, AttackKind};
use csi_core::eval::BenchConfig;
use csi_core::semantic::remote::RemoteConfig;
use csi_core::watermark::{Scheme, SchemeConfig};
use csi_core::world::{DiffusionConfig, World};
use csi_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Token dropout applied by the mock captioner to non-anchor tokens.
    pub mock_dropout: f64,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub schemes: Vec<Scheme>,
    pub attacks: Vec<AttackKind>,
    pub n_images: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let d = BenchConfig::default();
        Self {
            schemes: d.schemes,
            attacks: d.attacks,
            n_images: d.n_images,
        }
    }
}

/// Everything a command needs besides its positional inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub diffusion: DiffusionConfig,
    pub watermark: SchemeConfig,
    /// Key file per scheme, used when `--key` is not given.
    pub keys: BTreeMap<Scheme, PathBuf>,
    pub provider: ProviderConfig,
    pub attack: AttackConfig,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that does not depend on the command.
    pub fn validate(&self) -> Result<World> {
        self.attack.validate()?;
        self.watermark.calibration.validate()?;
        if !(0.0..=1.0).contains(&self.provider.mock_dropout) {
            return Err(Error::config("provider.mock_dropout must lie in [0, 1]"));
        }
        World::new(self.diffusion.clone())
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            schemes: self.bench.schemes.clone(),
            attacks: self.bench.attacks.clone(),
            n_images: self.bench.n_images,
            seed: self.seed,
            diffusion: self.diffusion.clone(),
            watermark: self.watermark.clone(),
            attack: AttackConfig {
                seed: self.seed,
                ..self.attack.clone()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 9
            out = "runs"
            [diffusion]
            steps = 12
            [watermark.gsw]
            bits = 32
            [watermark.calibration]
            n_null = 200
            [keys]
            gsw = "keys/gsw.json"
            [provider]
            kind = "remote"
            [provider.remote]
            offline = true
            [attack]
            tau_vis = 0.9
            [bench]
            schemes = ["gsw", "seal"]
            attacks = ["csi"]
            n_images = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.diffusion.steps, 12);
        assert_eq!(cfg.keys[&Scheme::Gsw], PathBuf::from("keys/gsw.json"));
        assert_eq!(cfg.provider.kind, ProviderKind::Remote);
        assert!(cfg.provider.remote.offline);
        let b = cfg.bench_config();
        assert_eq!((b.n_images, b.seed, b.attack.tau_vis), (3, 9, 0.9));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[attack]\ntau = 1").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.attack.tau_text = 3.0;
        assert!(cfg.validate().unwrap_err().is_config());
        let mut cfg = RunConfig::default();
        cfg.diffusion.steps = 0;
        assert!(cfg.validate().is_err());
    }
}
