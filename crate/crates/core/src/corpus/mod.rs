//! BIO-tagged corpora: tags, sentences, CoNLL-style I/O, statistics and splits.
//!
//! The on-disk format is two TAB-separated columns (`token<TAB>tag`), one
//! token per line, with a single blank line after every sentence. There is
//! no comment syntax and no document separator.

mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, EntityTypeSpec, SyntheticConfig};

/// A single BIO tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn begin(etype: impl Into<String>) -> Self {
        Tag::Begin(etype.into())
    }

    pub fn inside(etype: impl Into<String>) -> Self {
        Tag::Inside(etype.into())
    }

    /// Entity type carried by the tag, `None` for `O`.
    pub fn etype(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(raw: &str) -> Result<Self> {
        if raw == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, etype) = raw
            .split_once('-')
            .ok_or_else(|| Error::InvalidTag(raw.to_string()))?;
        if etype.is_empty() || etype.chars().any(char::is_whitespace) {
            return Err(Error::InvalidTag(raw.to_string()));
        }
        match prefix {
            "B" => Ok(Tag::Begin(etype.to_string())),
            "I" => Ok(Tag::Inside(etype.to_string())),
            _ => Err(Error::InvalidTag(raw.to_string())),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// A BIO violation: the first offending position and a human readable reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioViolation {
    pub position: usize,
    pub message: String,
}

/// Checks that every `I-X` continues a `B-X` or `I-X` of the same type.
pub fn validate_bio(tags: &[Tag]) -> std::result::Result<(), BioViolation> {
    let mut prev: Option<&Tag> = None;
    for (position, tag) in tags.iter().enumerate() {
        if let Tag::Inside(etype) = tag {
            let continues = matches!(prev.and_then(Tag::etype), Some(p) if p == etype);
            if !continues {
                let after = prev.map_or_else(|| "sentence start".to_string(), |p| p.to_string());
                return Err(BioViolation {
                    position,
                    message: format!("I-{etype} cannot follow {after}"),
                });
            }
        }
        prev = Some(tag);
    }
    Ok(())
}

/// Maps every orphan `I-X` to `B-X`. Idempotent; valid sequences pass through unchanged.
pub fn repair_bio(tags: &[Tag]) -> Vec<Tag> {
    let mut out: Vec<Tag> = Vec::with_capacity(tags.len());
    for tag in tags {
        let fixed = match tag {
            Tag::Inside(etype) => {
                let continues = matches!(out.last().and_then(Tag::etype), Some(p) if p == etype);
                if continues {
                    tag.clone()
                } else {
                    Tag::Begin(etype.clone())
                }
            }
            other => other.clone(),
        };
        out.push(fixed);
    }
    out
}

/// An entity mention: type plus inclusive token span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub etype: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Extracts maximal `B-X (I-X)*` runs, ordered by start position.
pub fn extract_entities(tags: &[Tag]) -> Result<Vec<Span>> {
    validate_bio(tags).map_err(|v| Error::InvalidBio {
        sentence: 0,
        position: v.position,
        message: v.message,
    })?;
    let mut spans: Vec<Span> = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {}
            Tag::Begin(etype) => spans.push(Span {
                etype: etype.clone(),
                start: i,
                end: i,
            }),
            Tag::Inside(_) => {
                // validated: the last span ends at i - 1 and has the same type
                if let Some(last) = spans.last_mut() {
                    last.end = i;
                }
            }
        }
    }
    Ok(spans)
}

/// A token sequence with aligned BIO tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: usize,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl LabeledSentence {
    pub fn new(id: usize, tokens: Vec<String>, tags: Vec<Tag>) -> Result<Self> {
        let s = Self { id, tokens, tags };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Empty(format!("sentence {} has no tokens", self.id)));
        }
        if self.tokens.len() != self.tags.len() {
            return Err(Error::Dimension(format!(
                "sentence {}: {} tokens but {} tags",
                self.id,
                self.tokens.len(),
                self.tags.len()
            )));
        }
        validate_bio(&self.tags).map_err(|v| Error::InvalidBio {
            sentence: self.id,
            position: v.position,
            message: v.message,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn entities(&self) -> Vec<Span> {
        extract_entities(&self.tags).expect("sentence tags are validated on construction")
    }
}

/// A collection of sentences plus the ordered entity-type schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub sentences: Vec<LabeledSentence>,
    pub schema: Vec<String>,
}

impl Dataset {
    /// Builds a dataset whose schema is inferred in first-appearance order.
    pub fn from_sentences(sentences: Vec<LabeledSentence>) -> Result<Self> {
        let mut schema: Vec<String> = Vec::new();
        for s in &sentences {
            for etype in s.tags.iter().filter_map(Tag::etype) {
                if !schema.iter().any(|e| e == etype) {
                    schema.push(etype.to_string());
                }
            }
        }
        Self::with_schema(sentences, schema)
    }

    /// Builds a dataset with an explicit schema, which must cover every tag.
    pub fn with_schema(sentences: Vec<LabeledSentence>, schema: Vec<String>) -> Result<Self> {
        let d = Self { sentences, schema };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let known: HashSet<&str> = self.schema.iter().map(String::as_str).collect();
        if known.len() != self.schema.len() {
            return Err(Error::Config("duplicate entity type in schema".into()));
        }
        let mut ids = HashSet::with_capacity(self.sentences.len());
        for s in &self.sentences {
            s.validate()?;
            if !ids.insert(s.id) {
                return Err(Error::Config(format!("duplicate sentence id {}", s.id)));
            }
            if let Some(etype) = s
                .tags
                .iter()
                .filter_map(Tag::etype)
                .find(|e| !known.contains(e))
            {
                return Err(Error::Config(format!(
                    "sentence {}: entity type {etype:?} missing from schema",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&LabeledSentence> {
        // ids are usually dense and sorted; fall back to a scan otherwise
        match self.sentences.get(id) {
            Some(s) if s.id == id => Some(s),
            _ => self.sentences.iter().find(|s| s.id == id),
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.id).collect()
    }

    /// Keeps the sentences whose id is in `ids`, preserving dataset order.
    pub fn subset(&self, ids: &BTreeSet<usize>) -> Dataset {
        Dataset {
            sentences: self
                .sentences
                .iter()
                .filter(|s| ids.contains(&s.id))
                .cloned()
                .collect(),
            schema: self.schema.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>, options: ParseOptions) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        parse_conll_with(&text, options)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serialize_conll(self))?;
        Ok(())
    }
}

/// Ingestion flags for [`parse_conll_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Rewrite orphan `I-X` tags as `B-X` instead of rejecting the sentence.
    pub repair: bool,
}

/// Parses a CoNLL-style corpus, rejecting invalid BIO sequences.
pub fn parse_conll(text: &str) -> Result<Dataset> {
    parse_conll_with(text, ParseOptions::default())
}

pub fn parse_conll_with(text: &str, options: ParseOptions) -> Result<Dataset> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let id = sentences.len();
        let mut tags = std::mem::take(tags);
        if options.repair {
            tags = repair_bio(&tags);
        }
        sentences.push(LabeledSentence::new(id, std::mem::take(tokens), tags)?);
        Ok(())
    };

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 tab-separated columns, found {}", columns.len()),
            });
        }
        if columns[0].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty token".into(),
            });
        }
        let tag = columns[1].parse::<Tag>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid tag {:?}", columns[1]),
        })?;
        tokens.push(columns[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags)?;
    Dataset::from_sentences(sentences)
}

/// Writes the dataset in the two-column format; every sentence is followed by a blank line.
pub fn serialize_conll(d: &Dataset) -> String {
    let mut out = String::new();
    for s in &d.sentences {
        for (token, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Corpus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub n_tokens: usize,
    pub n_entity_types: usize,
    pub n_entities: usize,
    pub avg_sentence_len: f64,
    pub avg_entities_per_sentence: f64,
    pub avg_entity_len: f64,
    /// Fraction of tokens carrying a B- or I- tag.
    pub pct_positive_tokens: f64,
    /// Fraction of sentences with at least one entity.
    pub pct_sentences_with_entity: f64,
    /// Fraction of sentences with at least two entities.
    pub pct_sentences_with_2plus_entities: f64,
}

pub fn dataset_stats(d: &Dataset) -> Result<CorpusStats> {
    if d.is_empty() {
        return Err(Error::Empty("statistics need at least one sentence".into()));
    }
    let n_sentences = d.len();
    let mut n_tokens = 0;
    let mut n_positive = 0;
    let mut n_entities = 0;
    let mut with_entity = 0;
    let mut with_two = 0;
    for s in &d.sentences {
        n_tokens += s.len();
        n_positive += s.tags.iter().filter(|t| !t.is_outside()).count();
        let k = s.entities().len();
        n_entities += k;
        with_entity += usize::from(k >= 1);
        with_two += usize::from(k >= 2);
    }
    let ns = n_sentences as f64;
    Ok(CorpusStats {
        n_sentences,
        n_tokens,
        n_entity_types: d.schema.len(),
        n_entities,
        avg_sentence_len: n_tokens as f64 / ns,
        avg_entities_per_sentence: n_entities as f64 / ns,
        avg_entity_len: if n_entities == 0 {
            0.0
        } else {
            n_positive as f64 / n_entities as f64
        },
        pct_positive_tokens: n_positive as f64 / n_tokens as f64,
        pct_sentences_with_entity: with_entity as f64 / ns,
        pct_sentences_with_2plus_entities: with_two as f64 / ns,
    })
}

/// Three-way disjoint partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labeled: Dataset,
    pub pool: Dataset,
    pub test: Dataset,
}

/// Draws `n_seed_labeled` and `n_test` sentences uniformly without replacement;
/// the remainder becomes the pool. Each part keeps the original sentence order.
pub fn split(d: &Dataset, seed: u64, n_seed_labeled: usize, n_test: usize) -> Result<Split> {
    let total = d.len();
    if n_seed_labeled + n_test > total {
        return Err(Error::Config(format!(
            "cannot draw {n_seed_labeled} labeled + {n_test} test sentences from {total}"
        )));
    }
    let mut order: Vec<usize> = d.ids();
    order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let labeled: BTreeSet<usize> = order[..n_seed_labeled].iter().copied().collect();
    let test: BTreeSet<usize> = order[n_seed_labeled..n_seed_labeled + n_test]
        .iter()
        .copied()
        .collect();
    let pool: BTreeSet<usize> = order[n_seed_labeled + n_test..].iter().copied().collect();
    Ok(Split {
        labeled: d.subset(&labeled),
        pool: d.subset(&pool),
        test: d.subset(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str =
        "Trump\tB-PER\nwas\tO\nborn\tO\nin\tO\nthe\tB-LOC\nUnited\tI-LOC\nStates\tI-LOC\n";

    fn tags(raw: &[&str]) -> Vec<Tag> {
        raw.iter().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn parses_table_example() {
        let d = parse_conll(TABLE1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.sentences[0].len(), 7);
        assert_eq!(d.sentences[0].id, 0);
        assert_eq!(d.schema, vec!["PER", "LOC"]);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let d = parse_conll("").unwrap();
        assert!(d.is_empty());
        assert!(d.schema.is_empty());
    }

    #[test]
    fn one_column_line_is_parse_error() {
        match parse_conll("foo") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_conll("a\tO\nb\tO\textra\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_bio_is_rejected_with_position() {
        let text = "a\tO\n\nx\tO\ny\tI-PER\n";
        match parse_conll(text) {
            Err(Error::InvalidBio {
                sentence, position, ..
            }) => {
                assert_eq!((sentence, position), (1, 1));
            }
            other => panic!("expected BIO error, got {other:?}"),
        }
        let repaired = parse_conll_with(text, ParseOptions { repair: true }).unwrap();
        assert_eq!(repaired.sentences[1].tags, tags(&["O", "B-PER"]));
    }

    #[test]
    fn bad_tag_strings() {
        for raw in ["", "B", "B-", "X-PER", "b-PER", "I PER", "B-P ER"] {
            assert!(raw.parse::<Tag>().is_err(), "{raw:?} should not parse");
        }
        assert_eq!("B-GPE-X".parse::<Tag>().unwrap(), Tag::begin("GPE-X"));
    }

    #[test]
    fn repair_is_idempotent_and_fixes_type_switch() {
        let raw = tags(&["I-A", "I-A", "B-B", "I-A", "O", "I-B"]);
        let once = repair_bio(&raw);
        assert_eq!(once, tags(&["B-A", "I-A", "B-B", "B-A", "O", "B-B"]));
        assert_eq!(repair_bio(&once), once);
        assert!(validate_bio(&once).is_ok());
    }

    #[test]
    fn serializes_table_example() {
        let d = parse_conll(TABLE1).unwrap();
        assert_eq!(serialize_conll(&d), format!("{TABLE1}\n"));
        assert_eq!(serialize_conll(&parse_conll("").unwrap()), "");
    }

    #[test]
    fn entity_extraction_cases() {
        let spans =
            extract_entities(&tags(&["B-PER", "O", "O", "O", "B-LOC", "I-LOC", "I-LOC"])).unwrap();
        assert_eq!(
            spans,
            vec![
                Span {
                    etype: "PER".into(),
                    start: 0,
                    end: 0
                },
                Span {
                    etype: "LOC".into(),
                    start: 4,
                    end: 6
                },
            ]
        );
        assert!(extract_entities(&tags(&["O", "O", "O"]))
            .unwrap()
            .is_empty());
        let adjacent = extract_entities(&tags(&["B-PER", "B-PER"])).unwrap();
        assert_eq!(adjacent.len(), 2);
        assert_eq!((adjacent[1].start, adjacent[1].end), (1, 1));
        assert!(extract_entities(&tags(&["O", "I-PER"])).is_err());
    }

    #[test]
    fn stats_hand_counted() {
        let text = format!("{TABLE1}\nx\tO\ny\tO\nz\tO\n");
        let st = dataset_stats(&parse_conll(&text).unwrap()).unwrap();
        assert_eq!(st.n_sentences, 2);
        assert_eq!(st.n_tokens, 10);
        assert_eq!(st.n_entity_types, 2);
        assert_eq!(st.avg_sentence_len, 5.0);
        assert_eq!(st.avg_entities_per_sentence, 1.0);
        assert_eq!(st.avg_entity_len, 2.0);
        assert_eq!(st.pct_positive_tokens, 0.4);
        assert_eq!(st.pct_sentences_with_entity, 0.5);
        assert_eq!(st.pct_sentences_with_2plus_entities, 0.5);
    }

    #[test]
    fn stats_all_outside_and_empty() {
        let st = dataset_stats(&parse_conll("x\tO\ny\tO\n").unwrap()).unwrap();
        assert_eq!(st.pct_positive_tokens, 0.0);
        assert_eq!(st.pct_sentences_with_entity, 0.0);
        assert_eq!(st.pct_sentences_with_2plus_entities, 0.0);
        assert!(dataset_stats(&parse_conll("").unwrap()).is_err());
    }

    fn numbered(n: usize) -> Dataset {
        let sentences = (0..n)
            .map(|i| LabeledSentence::new(i, vec![format!("t{i}")], vec![Tag::Outside]).unwrap())
            .collect();
        Dataset::from_sentences(sentences).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = numbered(100);
        let a = split(&d, 7, 10, 20).unwrap();
        assert_eq!((a.labeled.len(), a.pool.len(), a.test.len()), (10, 70, 20));
        let mut all: Vec<usize> = [&a.labeled, &a.pool, &a.test]
            .iter()
            .flat_map(|p| p.ids())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split(&d, 7, 10, 20).unwrap(), a);
        let b = split(&d, 8, 10, 20).unwrap();
        assert_ne!(a.labeled.ids(), b.labeled.ids());
        assert!(split(&d, 7, 90, 11).is_err());
    }
}
