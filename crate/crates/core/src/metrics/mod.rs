//! Evaluation and sampling-analysis metrics.
//!
//! Precision, recall and F1 with a zero denominator are reported as 0. This
//! matters in early iterations where a model trained on a handful of
//! sentences may predict no entities at all.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_entities, repair_bio, LabeledSentence, Span, Tag};
use crate::error::{Error, Result};

pub use report::{
    comparison_csv, comparison_table, curve_from_rows, learning_curve_report, read_seed_csv,
    write_seed_csv, CurveReport, CurveRow, MeanStd, SeedRow,
};

/// True-positive, false-positive and false-negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn prf(self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        Self::from_pr(ratio(tp, tp + fp), ratio(tp, tp + fn_))
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn check_aligned(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} predicted sentences vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Dimension(format!(
                "sentence {i}: {} predicted tags vs {} gold",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Token-level counts, ignoring tokens where both sides are `O`.
pub fn token_counts(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<Counts> {
    check_aligned(pred, gold)?;
    let mut c = Counts::default();
    for (p, g) in pred.iter().flatten().zip(gold.iter().flatten()) {
        match (p.is_outside(), g.is_outside()) {
            (true, true) => {}
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) if p == g => c.tp += 1,
            (false, false) => {
                c.fp += 1;
                c.fn_ += 1;
            }
        }
    }
    Ok(c)
}

/// Token-level averaging convention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenAveraging {
    /// Pool counts over all non-`O` decisions.
    #[default]
    Micro,
    /// Average per-tag P/R over every non-`O` tag seen in gold or prediction.
    MacroPerTag,
}

/// Micro-averaged token F1 over non-`O` tags.
pub fn token_f1(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<Prf> {
    token_f1_with(pred, gold, TokenAveraging::Micro)
}

pub fn token_f1_with(
    pred: &[Vec<Tag>],
    gold: &[Vec<Tag>],
    averaging: TokenAveraging,
) -> Result<Prf> {
    match averaging {
        TokenAveraging::Micro => Ok(token_counts(pred, gold)?.prf()),
        TokenAveraging::MacroPerTag => {
            check_aligned(pred, gold)?;
            let mut per_tag: BTreeMap<&Tag, Counts> = BTreeMap::new();
            for (p, g) in pred.iter().flatten().zip(gold.iter().flatten()) {
                if p == g {
                    if !g.is_outside() {
                        per_tag.entry(g).or_default().tp += 1;
                    }
                    continue;
                }
                if !p.is_outside() {
                    per_tag.entry(p).or_default().fp += 1;
                }
                if !g.is_outside() {
                    per_tag.entry(g).or_default().fn_ += 1;
                }
            }
            if per_tag.is_empty() {
                return Ok(Prf::default());
            }
            let k = per_tag.len() as f64;
            let (p, r) = per_tag.values().fold((0.0, 0.0), |(p, r), c| {
                let prf = c.prf();
                (p + prf.precision, r + prf.recall)
            });
            Ok(Prf::from_pr(p / k, r / k))
        }
    }
}

/// Exact-span, exact-type entity counts. Orphan `I-X` tags are repaired first.
pub fn entity_counts(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<Counts> {
    check_aligned(pred, gold)?;
    let mut c = Counts::default();
    for (p, g) in pred.iter().zip(gold) {
        let ps: BTreeSet<Span> = extract_entities(&repair_bio(p))?.into_iter().collect();
        let gs: BTreeSet<Span> = extract_entities(&repair_bio(g))?.into_iter().collect();
        let hit = ps.intersection(&gs).count();
        c.tp += hit;
        c.fp += ps.len() - hit;
        c.fn_ += gs.len() - hit;
    }
    Ok(c)
}

pub fn entity_f1(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<Prf> {
    Ok(entity_counts(pred, gold)?.prf())
}

/// Fraction of sentences whose whole tag sequence is correct.
pub fn sentence_accuracy(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<f64> {
    check_aligned(pred, gold)?;
    if gold.is_empty() {
        return Err(Error::Empty("sentence accuracy over zero sentences".into()));
    }
    Ok(ratio(
        pred.iter().zip(gold).filter(|(p, g)| p == g).count(),
        gold.len(),
    ))
}

/// Share of entity mentions per type. Empty when there are no mentions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistributionSnapshot(pub BTreeMap<String, f64>);

impl DistributionSnapshot {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Proportion of `etype`; 0 when absent.
    pub fn get(&self, etype: &str) -> f64 {
        self.0.get(etype).copied().unwrap_or(0.0)
    }

    pub fn from_counts(counts: &BTreeMap<String, usize>, schema: &[String]) -> Self {
        let total: usize = counts.values().sum();
        if total == 0 {
            return Self::default();
        }
        let mut out = BTreeMap::new();
        for etype in schema.iter().chain(counts.keys()) {
            let n = counts.get(etype).copied().unwrap_or(0);
            out.insert(etype.clone(), n as f64 / total as f64);
        }
        Self(out)
    }
}

/// Mention counts per type over a set of tag sequences.
pub fn entity_type_counts<'a>(
    tag_seqs: impl IntoIterator<Item = &'a [Tag]>,
) -> Result<BTreeMap<String, usize>> {
    let mut counts = BTreeMap::new();
    for tags in tag_seqs {
        for span in extract_entities(tags)? {
            *counts.entry(span.etype).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Entity-type proportions among all mentions in `selected`. Schema types
/// without mentions are present with proportion 0.
pub fn distribution_snapshot(
    selected: &[LabeledSentence],
    schema: &[String],
) -> DistributionSnapshot {
    let counts = entity_type_counts(selected.iter().map(|s| s.tags.as_slice()))
        .expect("labeled sentences hold valid BIO");
    DistributionSnapshot::from_counts(&counts, schema)
}

/// L1 distance between two snapshots; types missing from one side count as 0.
pub fn sampling_offset(prev: &DistributionSnapshot, curr: &DistributionSnapshot) -> f64 {
    let keys: BTreeSet<&String> = prev.0.keys().chain(curr.0.keys()).collect();
    keys.into_iter()
        .map(|k| (curr.get(k) - prev.get(k)).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(raw: &[&str]) -> Vec<Tag> {
        raw.iter().map(|t| t.parse().unwrap()).collect()
    }

    fn snap(raw: &[(&str, f64)]) -> DistributionSnapshot {
        DistributionSnapshot(raw.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn token_f1_hand_cases() {
        let gold = vec![seq(&["B-PER", "I-PER", "O", "B-LOC"])];
        assert_eq!(
            token_f1(&gold, &gold).unwrap(),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );

        let none = token_f1(&[seq(&["O", "O"])], &[seq(&["B-PER", "O"])]).unwrap();
        assert_eq!(none, Prf::default());

        let gold = vec![seq(&["B-A", "I-A", "O", "B-B"])];
        let pred = vec![seq(&["B-A", "I-B", "O", "B-B"])];
        let c = token_counts(&pred, &gold).unwrap();
        assert_eq!(
            c,
            Counts {
                tp: 2,
                fp: 1,
                fn_: 1
            }
        );
        let prf = c.prf();
        assert_eq!(prf.precision, 2.0 / 3.0);
        assert_eq!(prf.recall, 2.0 / 3.0);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_token_f1() {
        let gold = vec![seq(&["B-A", "B-B", "O"])];
        let pred = vec![seq(&["B-A", "O", "O"])];
        // B-A: P=R=1; B-B: P=0 (no predictions), R=0
        let prf = token_f1_with(&pred, &gold, TokenAveraging::MacroPerTag).unwrap();
        assert_eq!((prf.precision, prf.recall), (0.5, 0.5));
        let micro = token_f1(&pred, &gold).unwrap();
        assert_eq!((micro.precision, micro.recall), (1.0, 0.5));
    }

    #[test]
    fn entity_f1_hand_cases() {
        let gold = vec![seq(&["B-LOC", "I-LOC", "I-LOC", "O"])];
        assert_eq!(entity_f1(&gold, &gold).unwrap().f1, 1.0);

        let split = vec![seq(&["B-LOC", "B-LOC", "I-LOC", "O"])];
        assert_eq!(
            entity_counts(&split, &gold).unwrap(),
            Counts {
                tp: 0,
                fp: 2,
                fn_: 1
            }
        );

        let empty = vec![seq(&["O", "O"])];
        assert_eq!(entity_f1(&empty, &empty).unwrap(), Prf::default());

        // orphan inside in a prediction is read as a beginning
        let orphan = vec![seq(&["I-LOC", "I-LOC", "I-LOC", "O"])];
        assert_eq!(entity_f1(&orphan, &gold).unwrap().f1, 1.0);
    }

    #[test]
    fn sentence_accuracy_cases() {
        let gold = vec![seq(&["B-A", "O"]), seq(&["O", "O", "B-B"])];
        assert_eq!(sentence_accuracy(&gold, &gold).unwrap(), 1.0);
        let pred = vec![seq(&["B-A", "O"]), seq(&["O", "B-A", "B-B"])];
        assert_eq!(sentence_accuracy(&pred, &gold).unwrap(), 0.5);
        assert!(sentence_accuracy(&pred[..1], &gold).is_err());
    }

    #[test]
    fn one_wrong_token_costs_the_whole_sentence() {
        // 19 entity tokens, one of them relabeled so the span breaks in two
        let mut gold_raw = vec!["B-A"];
        gold_raw.extend(std::iter::repeat_n("I-A", 18));
        let gold = vec![seq(&gold_raw)];
        let mut pred_raw = gold_raw.clone();
        pred_raw[10] = "B-A";
        let pred = vec![seq(&pred_raw)];
        let f1 = token_f1(&pred, &gold).unwrap().f1;
        assert!((f1 - 18.0 / 19.0).abs() < 1e-12);
        assert!((f1 - 0.947).abs() < 1e-3);
        assert_eq!(sentence_accuracy(&pred, &gold).unwrap(), 0.0);
    }

    #[test]
    fn snapshots() {
        let tags = [seq(&["B-A", "O", "B-A"]), seq(&["B-B", "I-B"])];
        let sents: Vec<LabeledSentence> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| LabeledSentence::new(i, vec!["x".into(); t.len()], t.clone()).unwrap())
            .collect();
        let s = distribution_snapshot(&sents, &["A".into(), "B".into(), "C".into()]);
        assert_eq!(s.get("A"), 2.0 / 3.0);
        assert_eq!(s.get("B"), 1.0 / 3.0);
        assert_eq!(s.0.get("C"), Some(&0.0));
        let empty = LabeledSentence::new(9, vec!["x".into()], vec![Tag::Outside]).unwrap();
        assert!(distribution_snapshot(&[empty], &["A".into()]).is_empty());
    }

    #[test]
    fn offset_cases() {
        let a = snap(&[("A", 0.6), ("B", 0.4)]);
        assert_eq!(sampling_offset(&a, &a), 0.0);
        assert_eq!(
            sampling_offset(&snap(&[("A", 1.0)]), &snap(&[("B", 1.0)])),
            2.0
        );
        let b = snap(&[("A", 0.5), ("B", 0.5)]);
        assert!((sampling_offset(&a, &b) - 0.2).abs() < 1e-15);
    }

    fn arb_snapshot() -> impl Strategy<Value = DistributionSnapshot> {
        proptest::collection::vec(0u32..10, 4).prop_map(|w| {
            let total: u32 = w.iter().sum();
            if total == 0 {
                return DistributionSnapshot::default();
            }
            DistributionSnapshot(
                w.iter()
                    .enumerate()
                    .map(|(i, x)| (format!("T{i}"), *x as f64 / total as f64))
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn offset_is_a_bounded_metric(a in arb_snapshot(), b in arb_snapshot(), c in arb_snapshot()) {
            let ab = sampling_offset(&a, &b);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&ab));
            prop_assert!((ab - sampling_offset(&b, &a)).abs() < 1e-15);
            prop_assert!(sampling_offset(&a, &c) <= ab + sampling_offset(&b, &c) + 1e-12);
            prop_assert_eq!(sampling_offset(&a, &a), 0.0);
        }

        #[test]
        fn f1_is_order_invariant(
            pairs in proptest::collection::vec(
                proptest::collection::vec((0usize..3, 0usize..3), 1..6), 1..6),
            rotate in 0usize..6,
        ) {
            let vocab = [Tag::Outside, Tag::begin("A"), Tag::begin("B")];
            let gold: Vec<Vec<Tag>> = pairs.iter().map(|s| s.iter().map(|(g, _)| vocab[*g].clone()).collect()).collect();
            let pred: Vec<Vec<Tag>> = pairs.iter().map(|s| s.iter().map(|(_, p)| vocab[*p].clone()).collect()).collect();
            let k = rotate % gold.len();
            let (mut g2, mut p2) = (gold.clone(), pred.clone());
            g2.rotate_left(k);
            p2.rotate_left(k);
            prop_assert_eq!(token_counts(&pred, &gold).unwrap(), token_counts(&p2, &g2).unwrap());
            prop_assert_eq!(entity_counts(&pred, &gold).unwrap(), entity_counts(&p2, &g2).unwrap());
            let acc = sentence_accuracy(&pred, &gold).unwrap();
            prop_assert!(acc <= 1.0);
            prop_assert_eq!(acc == 1.0, pred == gold);
        }
    }
}
