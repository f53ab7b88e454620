use std::collections::{BTreeMap, HashSet};

use rand::Rng as _;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng::{derived_rng, hash_str};
use crate::semantic::prompt::{tokenize, AnchorSet, AttackIntent, Prompt};

pub const DEFAULT_META_PROMPT: &str = include_str!("../../assets/meta_prompt.txt");
const BUNDLED_ATTRIBUTES: &str = include_str!("../../assets/attributes.toml");

/// Proposes minimally edited prompts that keep the anchors and carry the intent.
pub trait Proposer: Send + Sync {
    fn propose(&self, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent, m: usize) -> Result<Vec<Prompt>>;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fillers {
    phrases: Vec<String>,
}

/// Attribute groups, synonyms and filler phrases for the mock proposer.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeTable {
    groups: BTreeMap<String, Vec<String>>,
    synonyms: BTreeMap<String, Vec<String>>,
    fillers: Fillers,
}

impl AttributeTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_ATTRIBUTES).expect("bundled attribute table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            what: "attribute table",
            reason: e.to_string(),
        })
    }

    pub fn group_of(&self, attribute: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, members)| members.iter().any(|m| m == attribute))
            .map(|(name, _)| name.as_str())
    }

    fn members(&self, group: &str) -> &[String] {
        self.groups.get(group).map(Vec::as_slice).unwrap_or(&[])
    }

    fn synonyms(&self, token: &str) -> &[String] {
        self.synonyms.get(token).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Enumerates edits of `t0` from an attribute table.
///
/// The base edit puts the target attribute into the slot of the replaced
/// attribute (or the first same-group token, or directly before the first
/// anchor). Further candidates substitute synonyms for unprotected tokens
/// and append filler phrases. Anchors and the injected attribute are never
/// touched.
#[derive(Debug, Clone)]
pub struct MockProposer {
    table: AttributeTable,
    seed: u64,
}

impl MockProposer {
    pub fn new(table: AttributeTable, seed: u64) -> Self {
        Self { table, seed }
    }

    pub fn bundled(seed: u64) -> Self {
        Self::new(AttributeTable::bundled(), seed)
    }

    /// Base token sequence and the position of the injected attribute.
    fn inject(&self, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent) -> Result<(Vec<String>, usize)> {
        let target = intent.target_attribute.as_str();
        let group = self
            .table
            .group_of(target)
            .ok_or_else(|| Error::UnknownAttribute(target.to_string()))?;
        let mut tokens = t0.tokens().to_vec();
        let replace_at = intent
            .replaced_attribute
            .as_deref()
            .and_then(|r| tokens.iter().position(|t| t == r && !g.contains(t)))
            .or_else(|| {
                tokens.iter().position(|t| {
                    !g.contains(t) && t != target && self.table.members(group).contains(t)
                })
            });
        if let Some(i) = replace_at {
            tokens[i] = target.to_string();
            return Ok((tokens, i));
        }
        if let Some(i) = tokens.iter().position(|t| t == target) {
            return Ok((tokens, i));
        }
        let at = tokens.iter().position(|t| g.contains(t)).unwrap_or(0);
        tokens.insert(at, target.to_string());
        Ok((tokens, at))
    }
}

fn render(tokens: &[String], choice: &[usize], slots: &[(usize, Vec<String>)], fillers: &[String]) -> String {
    let mut out = tokens.to_vec();
    for ((pos, opts), &c) in slots.iter().zip(choice) {
        out[*pos] = opts[c].clone();
    }
    let mut text = out.join(" ");
    if let Some(&f) = choice.get(slots.len()) {
        if f > 0 {
            text.push_str(", ");
            text.push_str(&fillers[f - 1]);
        }
    }
    text
}

impl Proposer for MockProposer {
    fn propose(&self, t0: &Prompt, g: &AnchorSet, intent: &AttackIntent, m: usize) -> Result<Vec<Prompt>> {
        if m == 0 {
            return Err(Error::config("candidate count must be at least 1"));
        }
        let (base, injected) = self.inject(t0, g, intent)?;
        let slots: Vec<(usize, Vec<String>)> = base
            .iter()
            .enumerate()
            .filter(|(i, t)| *i != injected && !g.contains(t))
            .filter_map(|(i, t)| {
                let syn = self.table.synonyms(t);
                (!syn.is_empty()).then(|| {
                    let mut opts = vec![t.clone()];
                    opts.extend(syn.iter().filter(|s| !g.contains(s) && *s != t).cloned());
                    (i, opts)
                })
            })
            .collect();
        let fillers = &self.table.fillers.phrases;
        let mut radices: Vec<usize> = slots.iter().map(|(_, o)| o.len()).collect();
        radices.push(fillers.len() + 1);

        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(m);
        let mut push = |choice: &[usize], out: &mut Vec<Prompt>| {
            let text = render(&base, choice, &slots, fillers);
            if seen.insert(tokenize(&text)) {
                out.push(Prompt::new(text).expect("edits keep tokens"));
            }
        };
        push(&vec![0; radices.len()], &mut out);

        let mut rng = derived_rng(hash_str(self.seed, &t0.text()), &intent.target_attribute, 0);
        let mut attempts = 0;
        while out.len() < m && attempts < 64 * m {
            let choice: Vec<usize> = radices.iter().map(|&r| rng.random_range(0..r)).collect();
            push(&choice, &mut out);
            attempts += 1;
        }
        // exhaustive mixed-radix sweep when random draws keep colliding
        let total: usize = radices.iter().product();
        let mut k = 0;
        while out.len() < m && k < total {
            let mut rem = k;
            let choice: Vec<usize> = radices
                .iter()
                .map(|&r| {
                    let d = rem % r;
                    rem /= r;
                    d
                })
                .collect();
            push(&choice, &mut out);
            k += 1;
        }
        out.truncate(m);
        Ok(out)
    }
}

/// Substitutes the anchor names and modification target into the meta-prompt template.
pub fn render_meta_prompt(template: &str, g: &AnchorSet, intent: &AttackIntent) -> String {
    let names: Vec<&str> = g.iter().collect();
    template
        .trim_end()
        .replace("[Name]", &names.join(", "))
        .replace("[Modification Target]", &intent.description)
}

pub fn render_user_message(t0: &Prompt, intent: &AttackIntent, m: usize) -> String {
    format!(
        "Original prompt: {}\nTarget attribute: {}\nWrite {m} edited prompts, one per line, without numbering or commentary.",
        t0.raw(),
        intent.target_attribute
    )
}

/// One candidate per non-empty line, stripped of list markers and quotes, de-duplicated.
pub fn parse_candidate_lines(content: &str, m: usize) -> Result<Vec<Prompt>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in content.lines() {
        let mut s = line.trim();
        s = s.trim_start_matches(|c: char| c.is_ascii_digit());
        s = s.trim_start_matches(['.', ')', '-', '*', ':']).trim();
        s = s.trim_matches(['"', '\'', '`']).trim();
        let Ok(p) = Prompt::new(s) else { continue };
        if seen.insert(p.tokens().to_vec()) {
            out.push(p);
        }
        if out.len() == m {
            break;
        }
    }
    if out.is_empty() {
        return Err(Error::Provider("LLM response contained no candidate lines".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fox() -> (Prompt, AnchorSet, AttackIntent) {
        (
            Prompt::new("a red fox running").unwrap(),
            AnchorSet::new(["fox"]).unwrap(),
            AttackIntent::new("blue", None),
        )
    }

    #[test]
    fn five_distinct_candidates_keep_anchor_and_target() {
        let (t0, g, intent) = fox();
        let c = MockProposer::bundled(7).propose(&t0, &g, &intent, 5).unwrap();
        assert_eq!(c.len(), 5);
        let distinct: HashSet<_> = c.iter().map(|p| p.tokens().to_vec()).collect();
        assert_eq!(distinct.len(), 5);
        for p in &c {
            assert!(p.contains("fox") && p.contains("blue"), "{p}");
            assert!(!p.contains("red"));
        }
        assert_eq!(c[0].raw(), "a blue fox running");
    }

    #[test]
    fn single_candidate_and_zero_request() {
        let (t0, g, intent) = fox();
        let p = MockProposer::bundled(1);
        assert_eq!(p.propose(&t0, &g, &intent, 1).unwrap().len(), 1);
        assert!(p.propose(&t0, &g, &intent, 0).is_err());
    }

    #[test]
    fn unknown_target_is_an_error() {
        let (t0, g, _) = fox();
        let intent = AttackIntent::new("zzzq", None);
        assert!(matches!(
            MockProposer::bundled(1).propose(&t0, &g, &intent, 3),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn insertion_when_no_slot_exists() {
        let t0 = Prompt::new("an ancient temple in a misty jungle").unwrap();
        let g = AnchorSet::new(["temple", "jungle"]).unwrap();
        let c = MockProposer::bundled(1)
            .propose(&t0, &g, &AttackIntent::new("golden", None), 1)
            .unwrap();
        assert_eq!(c[0].raw(), "an ancient golden temple in a misty jungle");
    }

    #[test]
    fn deterministic_under_seed() {
        let (t0, g, intent) = fox();
        let a = MockProposer::bundled(3).propose(&t0, &g, &intent, 16).unwrap();
        let b = MockProposer::bundled(3).propose(&t0, &g, &intent, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn meta_prompt_placeholders_are_filled() {
        assert!(DEFAULT_META_PROMPT.contains("[Name]"));
        assert!(DEFAULT_META_PROMPT.contains("[Modification Target]"));
        let (_, g, intent) = fox();
        let text = render_meta_prompt(DEFAULT_META_PROMPT, &g, &intent);
        assert!(text.contains("main subject fox"));
        assert!(text.contains("add the attribute \"blue\""));
        assert!(!text.contains('['));
    }

    #[test]
    fn response_parsing() {
        let text = "1. a blue fox running\n2) a blue fox sprinting\n\n- \"a blue fox running\"\n* one blue fox dashing";
        let c = parse_candidate_lines(text, 10).unwrap();
        let raws: Vec<&str> = c.iter().map(Prompt::raw).collect();
        assert_eq!(raws, ["a blue fox running", "a blue fox sprinting", "one blue fox dashing"]);
        assert_eq!(parse_candidate_lines(text, 2).unwrap().len(), 2);
        assert!(parse_candidate_lines("\n  \n", 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mock_never_drops_anchors(seed in any::<u64>(), idx in 0usize..20, m in 1usize..24) {
                let corpus = crate::corpus::Corpus::bundled();
                let e = &corpus.entries()[idx];
                let out = MockProposer::bundled(seed).propose(&e.prompt, &e.anchors, &e.intent, m).unwrap();
                prop_assert!(!out.is_empty() && out.len() <= m);
                for p in &out {
                    prop_assert!(e.anchors.all_in(p));
                    prop_assert!(p.contains(&e.intent.target_attribute));
                }
            }
        }
    }
}
