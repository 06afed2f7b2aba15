//! Seeded generator for imbalanced BIO corpora.
//!
//! Every entity type owns a lexicon of invented words plus a couple of cue
//! words that tend to precede its mentions. Mentions are embedded among
//! filler tokens. A fraction of each lexicon is borrowed from the filler
//! vocabulary or from another type, so token identity alone is not always
//! enough to tag correctly.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSentence, Tag};
use crate::error::{Error, Result};

/// One entity type and its relative mention frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTypeSpec {
    pub name: String,
    pub weight: f64,
    /// Longest mention of this type, in tokens.
    #[serde(default = "default_max_entity_len")]
    pub max_len: usize,
}

fn default_max_entity_len() -> usize {
    3
}

/// Generator recipe. Loadable from TOML; see `SyntheticConfig::from_toml_str`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_sentences: usize,
    /// Inclusive sentence length range in tokens (entities included).
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of a sentence carrying 0, 1, 2, ... mentions.
    pub entities_per_sentence: Vec<f64>,
    pub entity_types: Vec<EntityTypeSpec>,
    /// Distinct filler (outside) words.
    pub filler_vocab: usize,
    /// Distinct words per entity-type lexicon.
    pub lexicon_size: usize,
    /// Fraction of each lexicon borrowed from filler or other lexicons.
    pub ambiguous_fraction: f64,
    /// Chance that a mention is preceded by one of its type's cue words.
    pub cue_probability: f64,
    /// Zipf exponent for word choice inside every vocabulary.
    pub zipf_exponent: f64,
    /// Return an empty dataset instead of failing when `n_sentences == 0`.
    #[serde(default)]
    pub allow_empty: bool,
}

impl Default for SyntheticConfig {
    /// Eight types with a 20:1 frequency spread between the most and least common.
    fn default() -> Self {
        let types = [
            ("GPE", 0.30),
            ("PERSON", 0.22),
            ("ORG", 0.16),
            ("DATE", 0.11),
            ("NORP", 0.08),
            ("PRODUCT", 0.06),
            ("LAW", 0.045),
            ("LANGUAGE", 0.015),
        ];
        Self {
            n_sentences: 3000,
            min_len: 6,
            max_len: 22,
            entities_per_sentence: vec![0.25, 0.4, 0.25, 0.1],
            entity_types: types
                .iter()
                .map(|(name, weight)| EntityTypeSpec {
                    name: name.to_string(),
                    weight: *weight,
                    max_len: 3,
                })
                .collect(),
            filler_vocab: 300,
            lexicon_size: 40,
            ambiguous_fraction: 0.15,
            cue_probability: 0.5,
            zipf_exponent: 1.0,
            allow_empty: false,
        }
    }
}

impl SyntheticConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entity_types.is_empty() {
            return Err(Error::Config("synthetic schema is empty".into()));
        }
        if self.n_sentences == 0 && !self.allow_empty {
            return Err(Error::Config("n_sentences must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 <= min_len <= max_len".into()));
        }
        if let Some(t) = self
            .entity_types
            .iter()
            .find(|t| t.weight.is_nan() || t.weight <= 0.0 || t.max_len == 0)
        {
            return Err(Error::Config(format!(
                "entity type {} needs a positive weight and max_len",
                t.name
            )));
        }
        let mut names = HashSet::new();
        for t in &self.entity_types {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate entity type {}", t.name)));
            }
            format!("B-{}", t.name)
                .parse::<Tag>()
                .map_err(|_| Error::Config(format!("bad entity type name {:?}", t.name)))?;
        }
        if self.entities_per_sentence.is_empty()
            || self
                .entities_per_sentence
                .iter()
                .any(|p| p.is_nan() || *p < 0.0)
            || self.entities_per_sentence.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "entities_per_sentence must be non-negative with positive mass".into(),
            ));
        }
        if self.filler_vocab == 0 || self.lexicon_size == 0 {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        for (name, p) in [
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("cue_probability", self.cue_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent < 0.0 {
            return Err(Error::Config("zipf_exponent must be non-negative".into()));
        }
        Ok(())
    }
}

struct WordSampler {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl WordSampler {
    fn new(words: Vec<String>, exponent: f64) -> Self {
        let weights: Vec<f64> = (0..words.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(exponent))
            .collect();
        let dist = WeightedIndex::new(&weights).expect("non-empty positive weights");
        Self { words, dist }
    }

    fn sample(&self, rng: &mut impl Rng) -> &str {
        &self.words[self.dist.sample(rng)]
    }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn invent_words(
    n: usize,
    syllables: usize,
    used: &mut HashSet<String>,
    rng: &mut impl Rng,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut word = String::new();
        for _ in 0..syllables {
            word.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            word.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if used.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

/// Samples a corpus from `config`. Deterministic given `seed`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let schema: Vec<String> = config.entity_types.iter().map(|t| t.name.clone()).collect();
    if config.n_sentences == 0 {
        return Dataset::with_schema(Vec::new(), schema);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let filler = invent_words(config.filler_vocab, 2, &mut used, &mut rng);

    let n_types = config.entity_types.len();
    let mut lexicons: Vec<Vec<String>> = (0..n_types)
        .map(|_| invent_words(config.lexicon_size, 3, &mut used, &mut rng))
        .collect();
    let cues: Vec<Vec<String>> = (0..n_types)
        .map(|_| invent_words(2, 1, &mut used, &mut rng))
        .collect();

    // borrow words: some lexicon entries collide with filler words or with another type
    let n_shared = (config.ambiguous_fraction * config.lexicon_size as f64).round() as usize;
    let originals = lexicons.clone();
    for (k, lexicon) in lexicons.iter_mut().enumerate() {
        for slot in 0..n_shared.min(lexicon.len()) {
            let target = lexicon.len() - 1 - slot;
            lexicon[target] = if n_types > 1 && slot % 2 == 1 {
                let other = (k + 1 + rng.random_range(0..n_types - 1)) % n_types;
                originals[other][rng.random_range(0..originals[other].len())].clone()
            } else {
                filler[rng.random_range(0..filler.len())].clone()
            };
        }
    }

    let filler = WordSampler::new(filler, config.zipf_exponent);
    let lexicons: Vec<WordSampler> = lexicons
        .into_iter()
        .map(|words| WordSampler::new(words, config.zipf_exponent))
        .collect();
    let type_dist = WeightedIndex::new(config.entity_types.iter().map(|t| t.weight))
        .map_err(|e| Error::Config(e.to_string()))?;
    let count_dist = WeightedIndex::new(&config.entities_per_sentence)
        .map_err(|e| Error::Config(e.to_string()))?;

    enum Segment {
        Filler,
        Mention(usize, usize, bool),
    }

    let mut sentences = Vec::with_capacity(config.n_sentences);
    for id in 0..config.n_sentences {
        let target_len = rng.random_range(config.min_len..=config.max_len);
        let n_mentions = count_dist.sample(&mut rng);
        let mut segments = Vec::new();
        let mut used_len = 0;
        for _ in 0..n_mentions {
            let k = type_dist.sample(&mut rng);
            let len = rng.random_range(1..=config.entity_types[k].max_len);
            let cued = rng.random_bool(config.cue_probability);
            used_len += len + usize::from(cued);
            segments.push(Segment::Mention(k, len, cued));
        }
        let n_filler = target_len
            .saturating_sub(used_len)
            .max(usize::from(segments.is_empty()));
        segments.extend((0..n_filler).map(|_| Segment::Filler));
        segments.shuffle(&mut rng);

        let mut tokens = Vec::with_capacity(target_len);
        let mut tags = Vec::with_capacity(target_len);
        for seg in segments {
            match seg {
                Segment::Filler => {
                    tokens.push(filler.sample(&mut rng).to_string());
                    tags.push(Tag::Outside);
                }
                Segment::Mention(k, len, cued) => {
                    if cued {
                        tokens.push(cues[k][rng.random_range(0..cues[k].len())].clone());
                        tags.push(Tag::Outside);
                    }
                    let name = &config.entity_types[k].name;
                    for j in 0..len {
                        tokens.push(lexicons[k].sample(&mut rng).to_string());
                        tags.push(if j == 0 {
                            Tag::begin(name.clone())
                        } else {
                            Tag::inside(name.clone())
                        });
                    }
                }
            }
        }
        sentences.push(LabeledSentence::new(id, tokens, tags)?);
    }
    Dataset::with_schema(sentences, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::serialize_conll;

    fn two_type_config(n: usize) -> SyntheticConfig {
        SyntheticConfig {
            n_sentences: n,
            entity_types: vec![
                EntityTypeSpec {
                    name: "A".into(),
                    weight: 0.8,
                    max_len: 2,
                },
                EntityTypeSpec {
                    name: "B".into(),
                    weight: 0.2,
                    max_len: 2,
                },
            ],
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn realized_type_proportion_tracks_weights() {
        let d = generate_synthetic(&two_type_config(1000), 11).unwrap();
        let (mut a, mut total) = (0usize, 0usize);
        for s in &d.sentences {
            for span in s.entities() {
                total += 1;
                a += usize::from(span.etype == "A");
            }
        }
        let share = a as f64 / total as f64;
        assert!((share - 0.8).abs() <= 0.03, "share of A = {share}");
    }

    #[test]
    fn zero_sentences_errors_unless_allowed() {
        let mut cfg = two_type_config(0);
        assert!(generate_synthetic(&cfg, 1).is_err());
        cfg.allow_empty = true;
        assert!(generate_synthetic(&cfg, 1).unwrap().is_empty());
    }

    #[test]
    fn empty_schema_errors() {
        let cfg = SyntheticConfig {
            entity_types: vec![],
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = two_type_config(200);
        let a = serialize_conll(&generate_synthetic(&cfg, 5).unwrap());
        let b = serialize_conll(&generate_synthetic(&cfg, 5).unwrap());
        assert_eq!(a, b);
        let c = serialize_conll(&generate_synthetic(&cfg, 6).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn lengths_respect_configured_range() {
        let cfg = SyntheticConfig {
            n_sentences: 300,
            ..SyntheticConfig::default()
        };
        let d = generate_synthetic(&cfg, 3).unwrap();
        // mentions may push a sentence past max_len; filler never does
        assert!(d.sentences.iter().all(|s| !s.is_empty()));
        let mean = d.sentences.iter().map(|s| s.len()).sum::<usize>() as f64 / d.len() as f64;
        assert!(mean >= cfg.min_len as f64 && mean <= (cfg.max_len + 4) as f64);
    }

    #[test]
    fn parses_from_toml() {
        let text = r#"
            n_sentences = 10
            min_len = 3
            max_len = 8
            entities_per_sentence = [0.5, 0.5]
            filler_vocab = 20
            lexicon_size = 5
            ambiguous_fraction = 0.0
            cue_probability = 0.3
            zipf_exponent = 1.0

            [[entity_types]]
            name = "PER"
            weight = 2.0

            [[entity_types]]
            name = "LOC"
            weight = 1.0
            max_len = 1
        "#;
        let cfg = SyntheticConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.entity_types[0].max_len, 3);
        assert_eq!(generate_synthetic(&cfg, 0).unwrap().len(), 10);
        assert!(SyntheticConfig::from_toml_str("n_sentences = 1\nbogus = 2").is_err());
    }
}
