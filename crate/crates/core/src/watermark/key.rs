use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic::vector::UnitVector;
use crate::tensor::{LatentTensor, Shape};
use crate::watermark::calibrate::{calibrate, CalibrationConfig, CalibrationInfo};
use crate::watermark::gsw::{GswConfig, GswKey};
use crate::watermark::outcome::{DetectionOutcome, Scheme};
use crate::watermark::seal::{SealConfig, SealKey};
use crate::watermark::trw::{TrwConfig, TrwKey};
use crate::watermark::wind::{WindConfig, WindKey};

pub const KEY_FORMAT: &str = "csi-watermark-key";
pub const KEY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub trw: TrwConfig,
    pub gsw: GswConfig,
    pub wind: WindConfig,
    pub seal: SealConfig,
    pub calibration: CalibrationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum WatermarkKey {
    Trw(TrwKey),
    Gsw(GswKey),
    Wind(WindKey),
    Seal(SealKey),
}

impl WatermarkKey {
    /// Uncalibrated key with the scheme's reference threshold.
    pub fn generate(scheme: Scheme, cfg: &SchemeConfig, shape: Shape, seed: u64) -> Result<Self> {
        Ok(match scheme {
            Scheme::Trw => WatermarkKey::Trw(TrwKey::generate(&cfg.trw, shape, seed)?),
            Scheme::Gsw => WatermarkKey::Gsw(GswKey::generate(cfg.gsw.bits, shape, seed)?),
            Scheme::Wind => WatermarkKey::Wind(WindKey::generate(&cfg.wind, shape, seed)?),
            Scheme::Seal => WatermarkKey::Seal(SealKey::generate(&cfg.seal, shape, seed)?),
        })
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            WatermarkKey::Trw(_) => Scheme::Trw,
            WatermarkKey::Gsw(_) => Scheme::Gsw,
            WatermarkKey::Wind(_) => Scheme::Wind,
            WatermarkKey::Seal(_) => Scheme::Seal,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            WatermarkKey::Trw(k) => k.shape,
            WatermarkKey::Gsw(k) => k.shape,
            WatermarkKey::Wind(k) => k.shape,
            WatermarkKey::Seal(k) => k.shape,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            WatermarkKey::Trw(k) => k.threshold,
            WatermarkKey::Gsw(k) => k.threshold,
            WatermarkKey::Wind(k) => k.threshold,
            WatermarkKey::Seal(k) => k.match_threshold,
        }
    }

    pub fn set_threshold(&mut self, t: f64) {
        match self {
            WatermarkKey::Trw(k) => k.threshold = t,
            WatermarkKey::Gsw(k) => k.threshold = t,
            WatermarkKey::Wind(k) => k.threshold = t,
            WatermarkKey::Seal(k) => k.match_threshold = t,
        }
    }

    /// Dimension of the semantic embedding the detector consumes, if any.
    pub fn semantic_dim(&self) -> Option<usize> {
        match self {
            WatermarkKey::Seal(k) => Some(k.embed_dim),
            _ => None,
        }
    }

    pub fn is_count_statistic(&self) -> bool {
        matches!(self, WatermarkKey::Seal(_))
    }

    /// Watermarked initial latent. `seed` drives the free randomness (and picks
    /// the WIND bank entry); `semantic` is the generating prompt's embedding.
    pub fn embed(&self, seed: u64, semantic: &UnitVector) -> Result<LatentTensor> {
        match self {
            WatermarkKey::Trw(k) => k.embed(seed),
            WatermarkKey::Gsw(k) => k.embed(seed),
            WatermarkKey::Wind(k) => k.embed((seed % k.bank.len() as u64) as usize),
            WatermarkKey::Seal(k) => k.embed(semantic),
        }
    }

    /// Runs the detector on an inverted latent; `image_embedding` is used by SEAL only.
    pub fn detect(&self, z_hat: &LatentTensor, image_embedding: &UnitVector) -> Result<DetectionOutcome> {
        match self {
            WatermarkKey::Trw(k) => k.detect(z_hat),
            WatermarkKey::Gsw(k) => k.detect(z_hat),
            WatermarkKey::Wind(k) => k.detect(z_hat),
            WatermarkKey::Seal(k) => k.detect(z_hat, image_embedding),
        }
    }
}

/// On-disk key: scheme secret plus calibration metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub calibration: Option<CalibrationInfo>,
    pub key: WatermarkKey,
}

impl KeyFile {
    pub fn new(key: WatermarkKey, seed: u64, calibration: Option<CalibrationInfo>) -> Self {
        Self {
            format: KEY_FORMAT.into(),
            version: KEY_VERSION,
            seed,
            calibration,
            key,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let kf: KeyFile = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "key file",
            reason: e.to_string(),
        })?;
        if kf.format != KEY_FORMAT || kf.version != KEY_VERSION {
            return Err(Error::Format {
                what: "key file",
                reason: format!("unsupported format {:?} v{}", kf.format, kf.version),
            });
        }
        Ok(kf)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Generates and calibrates a key.
pub fn keygen(scheme: Scheme, cfg: &SchemeConfig, shape: Shape, seed: u64) -> Result<KeyFile> {
    cfg.calibration.validate()?;
    let mut key = WatermarkKey::generate(scheme, cfg, shape, seed)?;
    let info = calibrate(&mut key, &cfg.calibration, crate::rng::derive_seed(seed, "calibration", 0))?;
    Ok(KeyFile::new(key, seed, Some(info)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SchemeConfig {
        SchemeConfig {
            calibration: CalibrationConfig {
                n_null: 200,
                fpr_target: 0.01,
            },
            ..SchemeConfig::default()
        }
    }

    #[test]
    fn key_files_roundtrip_for_every_scheme() {
        for scheme in Scheme::ALL {
            let kf = keygen(scheme, &small_cfg(), Shape::default(), 42).unwrap();
            let text = kf.to_json().unwrap();
            let back = KeyFile::from_json(&text).unwrap();
            assert_eq!(back, kf, "{scheme}");
            assert_eq!(back.to_json().unwrap(), text);
            assert!(text.contains(&format!("\"scheme\": \"{scheme}\"")));
        }
    }

    #[test]
    fn keygen_is_deterministic() {
        let a = keygen(Scheme::Gsw, &small_cfg(), Shape::default(), 1).unwrap();
        let b = keygen(Scheme::Gsw, &small_cfg(), Shape::default(), 1).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn rejects_foreign_json() {
        assert!(KeyFile::from_json("{}").is_err());
        let kf = keygen(Scheme::Trw, &small_cfg(), Shape::default(), 1).unwrap();
        let text = kf.to_json().unwrap().replace(KEY_FORMAT, "other");
        assert!(KeyFile::from_json(&text).is_err());
    }
}
