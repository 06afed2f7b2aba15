//! Metric hand cases and learning-curve aggregation.

#[path = "common/small.rs"]
mod small;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use seqal::active::run_experiment;
use seqal::corpus::Tag;
use seqal::metrics::{
    comparison_csv, curve_from_rows, entity_f1, learning_curve_report, read_seed_csv,
    sampling_offset, sentence_accuracy, token_f1, DistributionSnapshot, MeanStd,
};
use seqal::strategies::Strategy;

fn tags(s: &str) -> Vec<Tag> {
    s.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

#[test]
fn hand_computed_scores() {
    let gold = vec![tags("B-PER I-PER O B-LOC"), tags("O O B-ORG"), tags("O O")];
    let pred = vec![
        tags("B-PER I-PER O B-ORG"),
        tags("O B-ORG I-ORG"),
        tags("O O"),
    ];
    // Token decisions: tp = B-PER, I-PER; B-LOC→B-ORG counts fp+fn; O→B-ORG fp; B-ORG→I-ORG fp+fn.
    let t = token_f1(&pred, &gold).unwrap();
    assert_relative_eq!(t.precision, 2.0 / 5.0, epsilon = 1e-12);
    assert_relative_eq!(t.recall, 2.0 / 4.0, epsilon = 1e-12);
    assert_relative_eq!(t.f1, 2.0 * 0.4 * 0.5 / 0.9, epsilon = 1e-12);
    // Entities: gold {PER 0..2, LOC 3, ORG 2}, pred {PER 0..2, ORG 3, ORG 1..3}.
    let e = entity_f1(&pred, &gold).unwrap();
    assert_relative_eq!(e.precision, 1.0 / 3.0, epsilon = 1e-12);
    assert_relative_eq!(e.recall, 1.0 / 3.0, epsilon = 1e-12);
    assert_relative_eq!(e.f1, 1.0 / 3.0, epsilon = 1e-12);
    assert_relative_eq!(
        sentence_accuracy(&pred, &gold).unwrap(),
        1.0 / 3.0,
        epsilon = 1e-12
    );
}

#[test]
fn degenerate_cases_do_not_divide_by_zero() {
    let all_o = vec![tags("O O O")];
    assert_eq!(token_f1(&all_o, &all_o).unwrap().f1, 0.0);
    assert_eq!(entity_f1(&all_o, &all_o).unwrap().f1, 0.0);
    assert_eq!(sentence_accuracy(&all_o, &all_o).unwrap(), 1.0);
    assert!(sentence_accuracy(&[], &[]).is_err());
    assert!(token_f1(&[tags("O")], &[tags("O O")]).is_err());
}

#[test]
fn orphan_inside_tags_count_as_mentions() {
    let gold = vec![tags("B-PER I-PER")];
    let pred = vec![tags("I-PER I-PER")];
    assert_eq!(entity_f1(&pred, &gold).unwrap().f1, 1.0);
}

#[test]
fn sampling_offset_is_the_l1_distance() {
    let a = DistributionSnapshot(BTreeMap::from([("A".into(), 0.5), ("B".into(), 0.5)]));
    let b = DistributionSnapshot(BTreeMap::from([("A".into(), 0.25), ("C".into(), 0.75)]));
    assert_relative_eq!(sampling_offset(&a, &b), 0.25 + 0.5 + 0.75, epsilon = 1e-15);
    assert_eq!(sampling_offset(&a, &a), 0.0);
    let empty = DistributionSnapshot::default();
    assert_eq!(sampling_offset(&empty, &a), 1.0);
}

#[test]
fn std_is_the_population_deviation() {
    let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m.mean, 2.5);
    assert_relative_eq!(m.std, 1.25f64.sqrt(), epsilon = 1e-15);
    assert_eq!(MeanStd::of(&[0.7]).unwrap().std, 0.0);
    assert!(MeanStd::of(&[]).is_none());
}

#[test]
fn curves_rebuilt_from_csv_match_the_log_exactly() {
    let mut cfg = small::small_config();
    cfg.n_iterations = 3;
    cfg.n_seeds = 3;
    let c = small::corpus(&cfg);
    let log = run_experiment(&cfg, c.clone(), Strategy::Ltp).unwrap();
    let csv = log.to_csv();
    let (schema, rows) = read_seed_csv(csv.as_bytes()).unwrap();
    assert_eq!(schema, log.schema);
    assert_eq!(rows, log.seed_rows());
    assert_eq!(rows.len(), cfg.n_seeds * (cfg.n_iterations + 1));

    let from_log = learning_curve_report(&log).unwrap();
    let from_csv = curve_from_rows("LTP", &schema, &rows).unwrap();
    assert_eq!(from_log, from_csv);
    assert_eq!(from_log.to_csv(), from_csv.to_csv());
    assert_eq!(from_log.rows.len(), cfg.n_iterations + 1);
    assert!(from_log.rows[1].offset.is_none());
    assert_eq!(from_log.rows[2].offset.unwrap().mean, {
        let xs: Vec<f64> = log
            .runs
            .iter()
            .map(|r| r.history[2].offset.unwrap())
            .collect();
        MeanStd::of(&xs).unwrap().mean
    });

    let one_seed: Vec<_> = rows.iter().filter(|r| r.seed_index == 0).cloned().collect();
    let single = curve_from_rows("LTP", &schema, &one_seed).unwrap();
    assert!(single
        .rows
        .iter()
        .all(|r| r.token_f1.std == 0.0 && r.n_seeds == 1));

    let table = comparison_csv(&[from_log.clone(), single]);
    assert_eq!(table.lines().count(), 1 + 2 * (cfg.n_iterations + 1));
    assert!(curve_from_rows("LTP", &schema, &[]).is_err());
}
