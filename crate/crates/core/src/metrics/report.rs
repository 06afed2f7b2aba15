//! Learning curves: per-seed rows and their per-iteration aggregates.
//!
//! The per-seed CSV has one row per (seed, iteration). Aggregates are
//! computed from those rows alone, so a report rebuilt from the CSV equals
//! one built from the in-memory log. Floats are written in shortest
//! round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::active::ExperimentLog;
use crate::error::{Error, Result};

/// One (seed, iteration) row of a learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    pub seed_index: usize,
    pub iteration: usize,
    pub labeled_size: usize,
    pub pool_size: usize,
    pub n_selected: usize,
    pub token_precision: f64,
    pub token_recall: f64,
    pub token_f1: f64,
    pub entity_precision: f64,
    pub entity_recall: f64,
    pub entity_f1: f64,
    pub sentence_accuracy: f64,
    pub cumulative_tokens: usize,
    pub cumulative_entities: usize,
    pub offset: Option<f64>,
    /// Share of each type in the batch; absent when the batch had no mentions.
    pub selected: BTreeMap<String, Option<f64>>,
    /// `selected - overall` per type; absent alongside `selected`.
    pub deviation: BTreeMap<String, Option<f64>>,
}

const FIXED: [&str; 15] = [
    "seed_index",
    "iteration",
    "labeled_size",
    "pool_size",
    "n_selected",
    "token_precision",
    "token_recall",
    "token_f1",
    "entity_precision",
    "entity_recall",
    "entity_f1",
    "sentence_accuracy",
    "cumulative_tokens",
    "cumulative_entities",
    "offset",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentLog {
    /// Flattens every run into rows, seed-major.
    pub fn seed_rows(&self) -> Vec<SeedRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for rec in &run.history {
                let has_batch = !rec.distribution.is_empty();
                let per_type = |f: &dyn Fn(&str) -> f64| -> BTreeMap<String, Option<f64>> {
                    self.schema
                        .iter()
                        .map(|e| (e.clone(), has_batch.then(|| f(e))))
                        .collect()
                };
                rows.push(SeedRow {
                    seed_index: run.seed_index,
                    iteration: rec.iteration,
                    labeled_size: rec.labeled_size,
                    pool_size: rec.pool_size,
                    n_selected: rec.selected.len(),
                    token_precision: rec.metrics.token.precision,
                    token_recall: rec.metrics.token.recall,
                    token_f1: rec.metrics.token.f1,
                    entity_precision: rec.metrics.entity.precision,
                    entity_recall: rec.metrics.entity.recall,
                    entity_f1: rec.metrics.entity.f1,
                    sentence_accuracy: rec.metrics.sentence_accuracy,
                    cumulative_tokens: rec.cumulative_tokens,
                    cumulative_entities: rec.cumulative_entities,
                    offset: rec.offset,
                    selected: per_type(&|e| rec.distribution.get(e)),
                    deviation: per_type(&|e| {
                        rec.distribution.get(e) - self.overall_distribution.get(e)
                    }),
                });
            }
        }
        rows
    }

    /// Per-seed learning-curve CSV.
    pub fn to_csv(&self) -> String {
        write_seed_csv(&self.schema, &self.seed_rows())
    }
}

pub fn write_seed_csv(schema: &[String], rows: &[SeedRow]) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(schema.iter().map(|e| format!("sel_{e}")));
    header.extend(schema.iter().map(|e| format!("dev_{e}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let mut cells = vec![
            r.seed_index.to_string(),
            r.iteration.to_string(),
            r.labeled_size.to_string(),
            r.pool_size.to_string(),
            r.n_selected.to_string(),
            r.token_precision.to_string(),
            r.token_recall.to_string(),
            r.token_f1.to_string(),
            r.entity_precision.to_string(),
            r.entity_recall.to_string(),
            r.entity_f1.to_string(),
            r.sentence_accuracy.to_string(),
            r.cumulative_tokens.to_string(),
            r.cumulative_entities.to_string(),
            opt(r.offset),
        ];
        cells.extend(
            schema
                .iter()
                .map(|e| opt(r.selected.get(e).copied().flatten())),
        );
        cells.extend(
            schema
                .iter()
                .map(|e| opt(r.deviation.get(e).copied().flatten())),
        );
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses a per-seed CSV; returns the entity schema (from the `sel_` columns) and the rows.
pub fn read_seed_csv(r: impl Read) -> Result<(Vec<String>, Vec<SeedRow>)> {
    let mut reader = csv::Reader::from_reader(r);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let header = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column {name:?}")))
    };
    let fixed = FIXED.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let schema: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_prefix("sel_").map(str::to_string))
        .collect();
    let sel_cols = schema
        .iter()
        .map(|e| col(&format!("sel_{e}")))
        .collect::<Result<Vec<_>>>()?;
    let dev_cols = schema
        .iter()
        .map(|e| col(&format!("dev_{e}")))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |c: usize| Error::Parse {
            line: line + 2,
            message: format!("bad value in column {:?}", &header[c]),
        };
        let int = |c: usize| rec[c].parse::<usize>().map_err(|_| bad(c));
        let float = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(c));
        let maybe = |c: usize| -> Result<Option<f64>> {
            if rec[c].is_empty() {
                Ok(None)
            } else {
                float(c).map(Some)
            }
        };
        let per_type = |cols: &[usize]| -> Result<BTreeMap<String, Option<f64>>> {
            schema
                .iter()
                .zip(cols)
                .map(|(e, &c)| Ok((e.clone(), maybe(c)?)))
                .collect()
        };
        rows.push(SeedRow {
            seed_index: int(fixed[0])?,
            iteration: int(fixed[1])?,
            labeled_size: int(fixed[2])?,
            pool_size: int(fixed[3])?,
            n_selected: int(fixed[4])?,
            token_precision: float(fixed[5])?,
            token_recall: float(fixed[6])?,
            token_f1: float(fixed[7])?,
            entity_precision: float(fixed[8])?,
            entity_recall: float(fixed[9])?,
            entity_f1: float(fixed[10])?,
            sentence_accuracy: float(fixed[11])?,
            cumulative_tokens: int(fixed[12])?,
            cumulative_entities: int(fixed[13])?,
            offset: maybe(fixed[14])?,
            selected: per_type(&sel_cols)?,
            deviation: per_type(&dev_cols)?,
        });
    }
    Ok((schema, rows))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Seed aggregate for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub n_seeds: usize,
    pub token_f1: MeanStd,
    pub entity_f1: MeanStd,
    pub sentence_accuracy: MeanStd,
    pub cumulative_tokens: MeanStd,
    pub cumulative_entities: MeanStd,
    /// Over seeds that have an offset at this iteration.
    pub offset: Option<MeanStd>,
    /// Mean `selected - overall` share per type, over seeds whose batch had mentions.
    pub deviation: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub strategy: String,
    pub schema: Vec<String>,
    pub rows: Vec<CurveRow>,
}

/// Aggregates per-seed rows by iteration.
pub fn curve_from_rows(strategy: &str, schema: &[String], rows: &[SeedRow]) -> Result<CurveReport> {
    if rows.is_empty() {
        return Err(Error::Empty("learning curve has no rows".into()));
    }
    let mut by_iter: BTreeMap<usize, Vec<&SeedRow>> = BTreeMap::new();
    for r in rows {
        by_iter.entry(r.iteration).or_default().push(r);
    }
    let out = by_iter
        .into_iter()
        .map(|(iteration, rs)| {
            let stat = |f: &dyn Fn(&SeedRow) -> f64| {
                MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty group")
            };
            let offsets: Vec<f64> = rs.iter().filter_map(|r| r.offset).collect();
            let deviation = schema
                .iter()
                .map(|e| {
                    let vals: Vec<f64> = rs
                        .iter()
                        .filter_map(|r| r.deviation.get(e).copied().flatten())
                        .collect();
                    (e.clone(), MeanStd::of(&vals).map(|m| m.mean))
                })
                .collect();
            CurveRow {
                iteration,
                n_seeds: rs.len(),
                token_f1: stat(&|r| r.token_f1),
                entity_f1: stat(&|r| r.entity_f1),
                sentence_accuracy: stat(&|r| r.sentence_accuracy),
                cumulative_tokens: stat(&|r| r.cumulative_tokens as f64),
                cumulative_entities: stat(&|r| r.cumulative_entities as f64),
                offset: MeanStd::of(&offsets),
                deviation,
            }
        })
        .collect();
    Ok(CurveReport {
        strategy: strategy.to_string(),
        schema: schema.to_vec(),
        rows: out,
    })
}

/// Seed-averaged learning curve of one experiment log.
pub fn learning_curve_report(log: &ExperimentLog) -> Result<CurveReport> {
    curve_from_rows(log.strategy.as_str(), &log.schema, &log.seed_rows())
}

fn curve_header(schema: &[String], with_strategy: bool) -> String {
    let mut cols: Vec<String> = Vec::new();
    if with_strategy {
        cols.push("strategy".into());
    }
    cols.extend(
        [
            "iteration",
            "n_seeds",
            "token_f1_mean",
            "token_f1_std",
            "entity_f1_mean",
            "entity_f1_std",
            "sentence_accuracy_mean",
            "sentence_accuracy_std",
            "cumulative_tokens_mean",
            "cumulative_entities_mean",
            "offset_mean",
            "offset_std",
        ]
        .map(String::from),
    );
    cols.extend(schema.iter().map(|e| format!("dev_{e}")));
    cols.join(",")
}

impl CurveReport {
    fn write_rows(&self, out: &mut String, with_strategy: bool) {
        for r in &self.rows {
            let mut cells: Vec<String> = Vec::new();
            if with_strategy {
                cells.push(self.strategy.clone());
            }
            cells.extend([
                r.iteration.to_string(),
                r.n_seeds.to_string(),
                r.token_f1.mean.to_string(),
                r.token_f1.std.to_string(),
                r.entity_f1.mean.to_string(),
                r.entity_f1.std.to_string(),
                r.sentence_accuracy.mean.to_string(),
                r.sentence_accuracy.std.to_string(),
                r.cumulative_tokens.mean.to_string(),
                r.cumulative_entities.mean.to_string(),
                opt(r.offset.map(|o| o.mean)),
                opt(r.offset.map(|o| o.std)),
            ]);
            cells.extend(
                self.schema
                    .iter()
                    .map(|e| opt(r.deviation.get(e).copied().flatten())),
            );
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }

    /// Plot-ready CSV, one row per iteration.
    pub fn to_csv(&self) -> String {
        let mut out = curve_header(&self.schema, false);
        out.push('\n');
        self.write_rows(&mut out, false);
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Mean sampling offset over the iterations in `range` that have one.
    pub fn mean_offset(&self, range: std::ops::RangeInclusive<usize>) -> Option<f64> {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| range.contains(&r.iteration))
            .filter_map(|r| r.offset.map(|o| o.mean))
            .collect();
        MeanStd::of(&xs).map(|m| m.mean)
    }
}

/// Several strategies in one CSV, one row per iteration per strategy. The
/// deviation columns cover the union of the schemas.
pub fn comparison_csv(reports: &[CurveReport]) -> String {
    let mut schema: Vec<String> = Vec::new();
    for r in reports {
        for e in &r.schema {
            if !schema.contains(e) {
                schema.push(e.clone());
            }
        }
    }
    let mut out = curve_header(&schema, true);
    out.push('\n');
    for r in reports {
        let widened = CurveReport {
            schema: schema.clone(),
            ..r.clone()
        };
        widened.write_rows(&mut out, true);
    }
    out
}

/// Fixed-width text table of seed-mean metrics, for terminals.
pub fn comparison_table(reports: &[CurveReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<8} {:>4} {:>16} {:>16} {:>16} {:>10} {:>8}",
        "strategy", "iter", "token_f1", "entity_f1", "sent_acc", "tokens", "offset"
    )
    .unwrap();
    for r in reports {
        for row in &r.rows {
            let pm = |m: MeanStd| format!("{:.4}±{:.4}", m.mean, m.std);
            writeln!(
                out,
                "{:<8} {:>4} {:>16} {:>16} {:>16} {:>10.1} {:>8}",
                r.strategy,
                row.iteration,
                pm(row.token_f1),
                pm(row.entity_f1),
                pm(row.sentence_accuracy),
                row.cumulative_tokens.mean,
                row.offset.map_or("-".into(), |o| format!("{:.4}", o.mean)),
            )
            .unwrap();
        }
    }
    out
}
