//! Bundled toy prompt corpus used by the benchmark.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::semantic::prompt::{AnchorSet, AttackIntent, Prompt};

const BUNDLED: &str = include_str!("../assets/corpus.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    prompt: String,
    anchors: Vec<String>,
    target: String,
    replace: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    entry: Vec<RawEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub prompt: Prompt,
    pub anchors: AnchorSet,
    pub intent: AttackIntent,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled corpus is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawCorpus = toml::from_str(text).map_err(|e| Error::Format {
            what: "prompt corpus",
            reason: e.to_string(),
        })?;
        let entries = raw
            .entry
            .into_iter()
            .map(|e| {
                let prompt = Prompt::new(e.prompt)?;
                let anchors = AnchorSet::new(&e.anchors)?;
                if !anchors.all_in(&prompt) {
                    return Err(Error::config(format!(
                        "corpus prompt {:?} does not contain all of its anchors",
                        prompt.raw()
                    )));
                }
                let intent = AttackIntent::new(&e.target, e.replace.as_deref());
                intent.validate(&anchors)?;
                Ok(CorpusEntry {
                    prompt,
                    anchors,
                    intent,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(Error::Empty("prompt corpus"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    /// Entry `i` modulo the corpus size.
    pub fn cycle(&self, i: usize) -> &CorpusEntry {
        &self.entries[i % self.entries.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::propose::AttributeTable;

    #[test]
    fn bundled_corpus_is_consistent_with_attribute_table() {
        let c = Corpus::bundled();
        assert_eq!(c.entries().len(), 20);
        let table = AttributeTable::bundled();
        for e in c.entries() {
            assert!(
                table.group_of(&e.intent.target_attribute).is_some(),
                "{}",
                e.intent.target_attribute
            );
        }
    }
}
