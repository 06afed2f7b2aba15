//! Sparse indicator features over token windows.
//!
//! A [`FeatureIndex`] maps feature names to dense ids. It is built once from
//! a dataset, then frozen: featurizing new text never grows it, and features
//! it has not seen are dropped.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabeledSentence};
use crate::error::{Error, Result};

pub const BIAS: &str = "bias";
const BOS: &str = "<BOS>";
const EOS: &str = "<EOS>";

/// A family of features fired at each position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTemplate {
    /// `w0=<token>`
    Identity,
    /// `lower=<lowercased token>`
    Lowercase,
    /// `pre1..3=` and `suf1..3=` character affixes.
    Affixes,
    /// `is_digit` and `is_punct` flags.
    Shape,
    /// Neighbour identities at offsets -2..=2, with sentence-boundary sentinels.
    Window,
    /// `w-1|w0=<prev>|<token>`
    Bigram,
}

impl FeatureTemplate {
    pub const ALL: [FeatureTemplate; 6] = [
        FeatureTemplate::Identity,
        FeatureTemplate::Lowercase,
        FeatureTemplate::Affixes,
        FeatureTemplate::Shape,
        FeatureTemplate::Window,
        FeatureTemplate::Bigram,
    ];

    fn name(self) -> &'static str {
        match self {
            FeatureTemplate::Identity => "identity",
            FeatureTemplate::Lowercase => "lowercase",
            FeatureTemplate::Affixes => "affixes",
            FeatureTemplate::Shape => "shape",
            FeatureTemplate::Window => "window",
            FeatureTemplate::Bigram => "bigram",
        }
    }
}

impl fmt::Display for FeatureTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureTemplate::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature template {s:?}")))
    }
}

/// Appends the names of every feature the templates fire at `position`.
fn fire(templates: &[FeatureTemplate], tokens: &[String], position: usize, out: &mut Vec<String>) {
    let token = tokens[position].as_str();
    let at = |offset: isize| -> &str {
        let i = position as isize + offset;
        if i < 0 {
            BOS
        } else if i as usize >= tokens.len() {
            EOS
        } else {
            tokens[i as usize].as_str()
        }
    };
    for template in templates {
        match template {
            FeatureTemplate::Identity => out.push(format!("w0={token}")),
            FeatureTemplate::Lowercase => out.push(format!("lower={}", token.to_lowercase())),
            FeatureTemplate::Affixes => {
                let chars: Vec<char> = token.chars().collect();
                for k in 1..=3.min(chars.len()) {
                    let prefix: String = chars[..k].iter().collect();
                    let suffix: String = chars[chars.len() - k..].iter().collect();
                    out.push(format!("pre{k}={prefix}"));
                    out.push(format!("suf{k}={suffix}"));
                }
            }
            FeatureTemplate::Shape => {
                if token.chars().all(|c| c.is_numeric()) {
                    out.push("is_digit".to_string());
                }
                if token.chars().all(|c| {
                    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
                }) {
                    out.push("is_punct".to_string());
                }
            }
            FeatureTemplate::Window => {
                for offset in [-2isize, -1, 1, 2] {
                    out.push(format!("w{offset:+}={}", at(offset)));
                }
            }
            FeatureTemplate::Bigram => out.push(format!("w-1|w0={}|{token}", at(-1))),
        }
    }
}

/// Dense feature-name → id map. Id 0 is always the bias feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndex {
    templates: Vec<FeatureTemplate>,
    names: Vec<String>,
    ids: HashMap<String, u32>,
    frozen: bool,
}

impl FeatureIndex {
    /// An unfrozen index holding only the bias feature.
    pub fn new(templates: &[FeatureTemplate]) -> Self {
        let mut templates = templates.to_vec();
        templates.sort_unstable();
        templates.dedup();
        let mut idx = Self {
            templates,
            names: Vec::new(),
            ids: HashMap::new(),
            frozen: false,
        };
        idx.intern(BIAS);
        idx
    }

    /// Adds a feature name, returning its id. Returns `None` once frozen and the name is unseen.
    pub fn intern(&mut self, name: &str) -> Option<u32> {
        if let Some(&id) = self.ids.get(name) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        Some(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn templates(&self) -> &[FeatureTemplate] {
        &self.templates
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    /// Writes one `name<TAB>id` line per feature, in id order.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for (id, name) in self.names.iter().enumerate() {
            if name.contains(['\t', '\n', '\r']) {
                return Err(Error::Format(format!(
                    "feature name {name:?} cannot be written"
                )));
            }
            writeln!(w, "{name}\t{id}")?;
        }
        Ok(())
    }

    /// Reads a `name<TAB>id` file; ids must be dense. The result is frozen.
    pub fn read_tsv(r: impl BufRead, templates: &[FeatureTemplate]) -> Result<Self> {
        let mut pairs: Vec<(u32, String)> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (name, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected name<TAB>id".into(),
            })?;
            let id: u32 = id.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad feature id {id:?}"),
            })?;
            pairs.push((id, name.to_string()));
        }
        pairs.sort_unstable();
        let mut idx = Self {
            templates: templates.to_vec(),
            names: Vec::with_capacity(pairs.len()),
            ids: HashMap::with_capacity(pairs.len()),
            frozen: false,
        };
        for (expected, (id, name)) in pairs.into_iter().enumerate() {
            if id as usize != expected || idx.ids.contains_key(&name) {
                return Err(Error::Format(format!(
                    "feature ids are not dense at {name:?}"
                )));
            }
            idx.intern(&name);
        }
        if idx.id(BIAS) != Some(0) {
            return Err(Error::Format("feature 0 must be the bias".into()));
        }
        idx.templates.sort_unstable();
        idx.templates.dedup();
        idx.freeze();
        Ok(idx)
    }
}

/// Indexes every feature the templates fire on `d`, plus bias, in sorted name order.
pub fn build_feature_index(d: &Dataset, templates: &[FeatureTemplate]) -> FeatureIndex {
    let mut idx = FeatureIndex::new(templates);
    let mut seen = BTreeSet::new();
    let mut buf = Vec::new();
    for s in &d.sentences {
        for i in 0..s.len() {
            buf.clear();
            fire(&idx.templates, &s.tokens, i, &mut buf);
            seen.extend(buf.drain(..));
        }
    }
    for name in &seen {
        idx.intern(name);
    }
    idx.freeze();
    idx
}

/// Ids of the indexed features fired at `position`, strictly increasing, bias included.
pub fn featurize(tokens: &[String], position: usize, idx: &FeatureIndex) -> Result<Vec<u32>> {
    if position >= tokens.len() {
        return Err(Error::Dimension(format!(
            "position {position} out of range for {} tokens",
            tokens.len()
        )));
    }
    if !idx.frozen {
        return Err(Error::Config(
            "feature index must be frozen before featurizing".into(),
        ));
    }
    let mut names = Vec::new();
    fire(&idx.templates, tokens, position, &mut names);
    let mut ids: Vec<u32> = std::iter::once(0)
        .chain(names.iter().filter_map(|n| idx.id(n)))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// Per-position active feature ids for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizedSentence {
    pub id: usize,
    pub positions: Vec<Vec<u32>>,
}

impl FeaturizedSentence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn featurize_sentence(s: &LabeledSentence, idx: &FeatureIndex) -> Result<FeaturizedSentence> {
    featurize_tokens(s.id, &s.tokens, idx)
}

pub fn featurize_tokens(
    id: usize,
    tokens: &[String],
    idx: &FeatureIndex,
) -> Result<FeaturizedSentence> {
    let positions = (0..tokens.len())
        .map(|i| featurize(tokens, i, idx))
        .collect::<Result<_>>()?;
    Ok(FeaturizedSentence { id, positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSentence, Tag};
    use proptest::prelude::*;

    fn dataset(sentences: &[&[&str]]) -> Dataset {
        let sentences = sentences
            .iter()
            .enumerate()
            .map(|(id, toks)| {
                LabeledSentence::new(
                    id,
                    toks.iter().map(|t| t.to_string()).collect(),
                    vec![Tag::Outside; toks.len()],
                )
                .unwrap()
            })
            .collect();
        Dataset::from_sentences(sentences).unwrap()
    }

    fn toks(raw: &[&str]) -> Vec<String> {
        raw.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identity_template_on_single_token() {
        let idx = build_feature_index(&dataset(&[&["ab"]]), &[FeatureTemplate::Identity]);
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.id(BIAS), Some(0));
        assert_eq!(idx.id("w0=ab"), Some(1));
        assert!(idx.is_frozen());
    }

    #[test]
    fn empty_template_set_is_bias_only() {
        let idx = build_feature_index(&dataset(&[&["ab", "cd"]]), &[]);
        assert_eq!(idx.len(), 1);
        assert_eq!(featurize(&toks(&["zz"]), 0, &idx).unwrap(), vec![0]);
    }

    #[test]
    fn rebuilding_is_deterministic() {
        let d = dataset(&[&["The", "cat", "sat"], &["2024", "!", "cat"]]);
        let a = build_feature_index(&d, &FeatureTemplate::ALL);
        let b = build_feature_index(&d, &FeatureTemplate::ALL);
        assert_eq!(a, b);
    }

    #[test]
    fn unseen_token_keeps_bias_and_known_context() {
        let d = dataset(&[&["the", "cat"]]);
        let idx = build_feature_index(&d, &FeatureTemplate::ALL);
        let ids = featurize(&toks(&["the", "zebra"]), 1, &idx).unwrap();
        let names: Vec<&str> = ids.iter().map(|&i| idx.name(i).unwrap()).collect();
        assert!(names.contains(&"bias"));
        assert!(names.contains(&"w-1=the"));
        assert!(names.contains(&"w+1=<EOS>"));
        assert!(!names.iter().any(|n| n.contains("zebra")));
    }

    #[test]
    fn boundary_uses_bos_sentinel() {
        let d = dataset(&[&["a", "b", "c"]]);
        let idx = build_feature_index(&d, &[FeatureTemplate::Window, FeatureTemplate::Bigram]);
        let ids = featurize(&toks(&["a", "b", "c"]), 0, &idx).unwrap();
        let names: Vec<&str> = ids.iter().map(|&i| idx.name(i).unwrap()).collect();
        assert!(names.contains(&"w-1=<BOS>"));
        assert!(names.contains(&"w-2=<BOS>"));
        assert!(names.contains(&"w-1|w0=<BOS>|a"));
    }

    #[test]
    fn digits_fire_shape_feature() {
        let d = dataset(&[&["in", "2024", "."]]);
        let idx = build_feature_index(&d, &[FeatureTemplate::Shape]);
        let year = featurize(&toks(&["in", "2024", "."]), 1, &idx).unwrap();
        assert!(year.contains(&idx.id("is_digit").unwrap()));
        let dot = featurize(&toks(&["in", "2024", "."]), 2, &idx).unwrap();
        assert!(dot.contains(&idx.id("is_punct").unwrap()));
        assert!(!dot.contains(&idx.id("is_digit").unwrap()));
    }

    #[test]
    fn out_of_range_position_errors() {
        let idx = build_feature_index(&dataset(&[&["a"]]), &FeatureTemplate::ALL);
        assert!(featurize(&toks(&["a"]), 1, &idx).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let idx = build_feature_index(&dataset(&[&["x", "y"], &["y", "z"]]), &FeatureTemplate::ALL);
        let mut buf = Vec::new();
        idx.write_tsv(&mut buf).unwrap();
        let back = FeatureIndex::read_tsv(&buf[..], &FeatureTemplate::ALL).unwrap();
        assert_eq!(back, idx);
        assert!(FeatureIndex::read_tsv(&b"bias\t0\nw0=a\t2\n"[..], &[]).is_err());
    }

    proptest! {
        #[test]
        fn featurize_never_grows_index_and_is_sorted(
            words in proptest::collection::vec("[a-c0-9.]{1,4}", 1..8),
            probe in proptest::collection::vec("[a-e0-9!]{1,5}", 1..8),
        ) {
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let idx = build_feature_index(&dataset(&[&refs]), &FeatureTemplate::ALL);
            let before = idx.len();
            for i in 0..probe.len() {
                let ids = featurize(&probe, i, &idx).unwrap();
                prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(ids[0], 0);
                prop_assert!(ids.iter().all(|&id| (id as usize) < idx.len()));
                prop_assert_eq!(featurize(&probe, i, &idx).unwrap(), ids);
            }
            prop_assert_eq!(idx.len(), before);
        }
    }
}
