use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on whitespace and punctuation.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// A tokenized text prompt or caption.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    raw: String,
    tokens: Vec<String>,
}

impl Prompt {
    /// Parses a prompt; it must contain at least one token.
    pub fn new(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        if tokens.is_empty() {
            return Err(Error::Empty("prompt has no tokens"));
        }
        Ok(Self { raw, tokens })
    }

    /// Builds a prompt from already-tokenized words; may be empty.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.to_lowercase()).collect();
        Self {
            raw: tokens.join(" "),
            tokens,
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.iter().any(|t| t == token)
    }

    /// Space-joined tokens.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// The subject tokens an edit must preserve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AnchorSet {
    anchors: BTreeSet<String>,
}

impl AnchorSet {
    pub fn new<I, S>(anchors: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let anchors: BTreeSet<String> = anchors
            .into_iter()
            .flat_map(|a| tokenize(a.as_ref()))
            .collect();
        if anchors.is_empty() {
            return Err(Error::config("anchor set must not be empty"));
        }
        Ok(Self { anchors })
    }

    /// Parses a comma-separated list.
    pub fn parse(list: &str) -> Result<Self> {
        Self::new(list.split(','))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.anchors.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.anchors.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// True when every anchor occurs in `p`.
    pub fn all_in(&self, p: &Prompt) -> bool {
        self.anchors.iter().all(|a| p.contains(a))
    }
}

impl TryFrom<Vec<String>> for AnchorSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        AnchorSet::new(v)
    }
}

impl From<AnchorSet> for Vec<String> {
    fn from(a: AnchorSet) -> Self {
        a.anchors.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackIntent {
    pub target_attribute: String,
    pub replaced_attribute: Option<String>,
    pub description: String,
}

impl AttackIntent {
    pub fn new(target: &str, replaced: Option<&str>) -> Self {
        let target_attribute = target.trim().to_lowercase();
        let replaced_attribute = replaced.map(|r| r.trim().to_lowercase());
        let description = match &replaced_attribute {
            Some(r) => format!("change the attribute \"{r}\" to \"{target_attribute}\""),
            None => format!("add the attribute \"{target_attribute}\""),
        };
        Self {
            target_attribute,
            replaced_attribute,
            description,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn validate(&self, anchors: &AnchorSet) -> Result<()> {
        let toks = tokenize(&self.target_attribute);
        if toks.len() != 1 {
            return Err(Error::config(format!(
                "target attribute must be a single token, got {:?}",
                self.target_attribute
            )));
        }
        if anchors.contains(&toks[0]) {
            return Err(Error::config(format!(
                "target attribute {:?} is one of the anchors",
                self.target_attribute
            )));
        }
        Ok(())
    }
}

/// Keeps only the anchor tokens of `p`, in order.
pub fn mask_anchors(p: &Prompt, g: &AnchorSet) -> Prompt {
    Prompt::from_tokens(
        p.tokens()
            .iter()
            .filter(|t| g.contains(t))
            .cloned()
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_splits_punctuation() {
        assert_eq!(
            tokenize("A Red-Fox, running!"),
            vec!["a", "red", "fox", "running"]
        );
        assert!(Prompt::new(" ,;. ").is_err());
    }

    #[test]
    fn mask_keeps_anchor_subsequence() {
        let p = Prompt::new("a red fox running").unwrap();
        let g = AnchorSet::new(["fox"]).unwrap();
        assert_eq!(mask_anchors(&p, &g).tokens(), ["fox"]);
    }

    #[test]
    fn mask_with_superset_is_identity() {
        let p = Prompt::new("a red fox running").unwrap();
        let g = AnchorSet::new(["a", "red", "fox", "running", "extra"]).unwrap();
        assert_eq!(mask_anchors(&p, &g).tokens(), p.tokens());
    }

    #[test]
    fn mask_with_disjoint_set_is_empty() {
        let p = Prompt::new("a red fox running").unwrap();
        let g = AnchorSet::new(["cat"]).unwrap();
        assert!(mask_anchors(&p, &g).is_empty());
    }

    #[test]
    fn intent_cannot_target_an_anchor() {
        let g = AnchorSet::parse("fox, forest").unwrap();
        assert!(AttackIntent::new("fox", None).validate(&g).is_err());
        assert!(AttackIntent::new("blue", Some("red")).validate(&g).is_ok());
        assert!(AnchorSet::parse(" , ").is_err());
    }
}
