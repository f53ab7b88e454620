//! Registry of generated latents and the prompts that produced them.
//!
//! The mock captioner answers from this ledger. Latents are keyed by a
//! SHA-256 digest of their shape and bytes; a nearest-neighbour lookup by
//! Euclidean distance serves latents that were perturbed after generation.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latfile;
use crate::tensor::LatentTensor;

pub const LEDGER_FILE: &str = "ledger.json";

pub fn latent_digest(x: &LatentTensor) -> String {
    let mut h = Sha256::new();
    for d in x.shape().dims() {
        h.update((d as u64).to_le_bytes());
    }
    h.update(x.to_le_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One persisted ledger row; `path` is relative to the ledger's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub path: Option<String>,
    pub prompt: String,
    pub seed: u64,
    pub hash: String,
}

#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub record: LedgerRecord,
    pub latent: LatentTensor,
}

#[derive(Debug, Default)]
struct Inner {
    entries: Vec<LedgerEntry>,
    by_hash: HashMap<String, usize>,
}

#[derive(Debug, Default)]
pub struct GenerationLedger {
    inner: RwLock<Inner>,
}

impl GenerationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `latent` as generated from `prompt`. Re-registering identical
    /// bytes keeps the first entry and returns its digest.
    pub fn register(&self, latent: &LatentTensor, prompt: &str, seed: u64, path: Option<String>) -> String {
        let hash = latent_digest(latent);
        let mut inner = self.inner.write().expect("ledger lock poisoned");
        if let Some(&i) = inner.by_hash.get(&hash) {
            if inner.entries[i].record.path.is_none() && path.is_some() {
                inner.entries[i].record.path = path;
            }
            return hash;
        }
        let idx = inner.entries.len();
        inner.entries.push(LedgerEntry {
            record: LedgerRecord {
                path,
                prompt: prompt.to_string(),
                seed,
                hash: hash.clone(),
            },
            latent: latent.clone(),
        });
        inner.by_hash.insert(hash.clone(), idx);
        hash
    }

    /// Drops every entry recorded under `path`; returns how many were removed.
    pub fn remove_path(&self, path: &str) -> usize {
        let mut inner = self.inner.write().expect("ledger lock poisoned");
        let before = inner.entries.len();
        inner.entries.retain(|e| e.record.path.as_deref() != Some(path));
        let index = inner
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.record.hash.clone(), i))
            .collect();
        inner.by_hash = index;
        before - inner.entries.len()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("ledger lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, x: &LatentTensor) -> Option<LedgerRecord> {
        let hash = latent_digest(x);
        let inner = self.inner.read().expect("ledger lock poisoned");
        inner
            .by_hash
            .get(&hash)
            .map(|&i| inner.entries[i].record.clone())
    }

    /// Entry with the smallest Euclidean distance to `x` among same-shaped latents.
    /// Ties resolve to the earliest registration.
    pub fn nearest(&self, x: &LatentTensor) -> Option<LedgerRecord> {
        let inner = self.inner.read().expect("ledger lock poisoned");
        let mut best: Option<(f64, usize)> = None;
        for (i, e) in inner.entries.iter().enumerate() {
            if e.latent.shape() != x.shape() {
                continue;
            }
            let d: f64 = e
                .latent
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| {
                    let d = (*a as f64) - (*b as f64);
                    d * d
                })
                .sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| inner.entries[i].record.clone())
    }

    pub fn records(&self) -> Vec<LedgerRecord> {
        self.inner
            .read()
            .expect("ledger lock poisoned")
            .entries
            .iter()
            .map(|e| e.record.clone())
            .collect()
    }

    /// Writes rows that have a file path to `dir/ledger.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let rows: Vec<LedgerRecord> = self
            .records()
            .into_iter()
            .filter(|r| r.path.is_some())
            .collect();
        let path = dir.join(LEDGER_FILE);
        let text = serde_json::to_string_pretty(&rows)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads `dir/ledger.json` (empty ledger when absent) and the latents it references.
    pub fn load(dir: &Path) -> Result<Self> {
        let ledger = Self::new();
        let path = dir.join(LEDGER_FILE);
        if !path.exists() {
            return Ok(ledger);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rows: Vec<LedgerRecord> = serde_json::from_str(&text)?;
        for row in rows {
            let Some(rel) = &row.path else { continue };
            let latent = latfile::read(&dir.join(rel))?;
            let hash = latent_digest(&latent);
            if hash != row.hash {
                return Err(Error::Format {
                    what: "ledger",
                    reason: format!("{rel} no longer matches its recorded digest"),
                });
            }
            ledger.register(&latent, &row.prompt, row.seed, row.path.clone());
        }
        Ok(ledger)
    }
}
