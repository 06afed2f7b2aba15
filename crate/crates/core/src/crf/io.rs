//! Text formats for trained models and external emission matrices.
//!
//! Model file:
//!
//! ```text
//! seqal-crf 1
//! sigma <f64>
//! constrain_bio <0|1>
//! labels <L>
//! <one tag per line, L lines>
//! features <F>
//! transitions
//! <L lines of L space-separated values>
//! weights
//! <F lines of L space-separated values>
//! ```
//!
//! Emission file: one block per sentence, blocks separated by a blank line.
//! A block starts with `sentence <id>` followed by one line of `L`
//! space-separated log-scores per token.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::Array2;

use super::CrfModel;
use crate::corpus::{Dataset, Tag};
use crate::error::{Error, Result};

const MAGIC: &str = "seqal-crf";
const VERSION: u32 = 1;

fn write_row(out: &mut String, row: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in row {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v}").expect("write to string");
    }
    out.push('\n');
}

pub fn write_model(m: &CrfModel, mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "sigma {}", m.l2_sigma()).unwrap();
    writeln!(out, "constrain_bio {}", u8::from(m.constrain_bio())).unwrap();
    writeln!(out, "labels {}", m.n_labels()).unwrap();
    for tag in m.labels() {
        writeln!(out, "{tag}").unwrap();
    }
    writeln!(out, "features {}", m.n_features()).unwrap();
    out.push_str("transitions\n");
    for row in m.transitions().rows() {
        write_row(&mut out, row.iter().copied());
    }
    out.push_str("weights\n");
    for row in m.weights().rows() {
        write_row(&mut out, row.iter().copied());
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Format(format!(
                "unexpected end of file at line {}",
                self.line_no
            ))),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ if line == key => Ok(String::new()),
            _ => Err(Error::Format(format!(
                "line {}: expected {key:?}, got {line:?}",
                self.line_no
            ))),
        }
    }

    fn number<T: std::str::FromStr>(&self, raw: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| Error::Format(format!("line {}: bad number {raw:?}", self.line_no)))
    }

    fn keyed_number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.keyed(key)?;
        self.number(&raw)
    }

    fn row(&mut self, width: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let row = line
            .split_whitespace()
            .map(|v| self.number::<f64>(v))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != width {
            return Err(Error::Format(format!(
                "line {}: expected {width} values, got {}",
                self.line_no,
                row.len()
            )));
        }
        Ok(row)
    }
}

pub fn read_model(r: impl BufRead) -> Result<CrfModel> {
    let mut lines = Lines {
        inner: r.lines(),
        line_no: 0,
    };
    let version = lines.keyed(MAGIC)?;
    if version != VERSION.to_string() {
        return Err(Error::Format(format!(
            "unsupported model version {version:?}"
        )));
    }
    let sigma: f64 = lines.keyed_number("sigma")?;
    let constrain: u8 = lines.keyed_number("constrain_bio")?;
    let n_labels: usize = lines.keyed_number("labels")?;
    let labels = (0..n_labels)
        .map(|_| lines.next()?.parse::<Tag>())
        .collect::<Result<Vec<_>>>()?;
    let n_features: usize = lines.keyed_number("features")?;
    lines.keyed("transitions")?;
    let mut transitions = Vec::with_capacity(n_labels * n_labels);
    for _ in 0..n_labels {
        transitions.extend(lines.row(n_labels)?);
    }
    lines.keyed("weights")?;
    let mut weights = Vec::with_capacity(n_features * n_labels);
    for _ in 0..n_features {
        weights.extend(lines.row(n_labels)?);
    }
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let model = CrfModel::from_parts(
        labels,
        Array2::from_shape_vec((n_features, n_labels), weights).map_err(shape_err)?,
        Array2::from_shape_vec((n_labels, n_labels), transitions).map_err(shape_err)?,
        sigma,
    )?;
    Ok(model.with_bio_constraints(constrain == 1))
}

/// Externally computed emission log-scores for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmissions {
    pub id: usize,
    /// `[N x L]`
    pub emissions: Array2<f64>,
}

pub fn write_emissions(blocks: &[SentenceEmissions], mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "sentence {}", block.id).unwrap();
        for row in block.emissions.rows() {
            write_row(&mut out, row.iter().copied());
        }
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

/// Parses an emission file. Every row must have `n_labels` values; when
/// `dataset` is given, block lengths must match the sentence lengths.
pub fn read_emissions(
    r: impl BufRead,
    n_labels: usize,
    dataset: Option<&Dataset>,
) -> Result<Vec<SentenceEmissions>> {
    let mut blocks = Vec::new();
    let mut current: Option<(usize, Vec<f64>, usize)> = None;

    let finish = |current: Option<(usize, Vec<f64>, usize)>,
                  blocks: &mut Vec<SentenceEmissions>|
     -> Result<()> {
        let Some((id, values, rows)) = current else {
            return Ok(());
        };
        if rows == 0 {
            return Err(Error::Dimension(format!("sentence {id}: no emission rows")));
        }
        if let Some(d) = dataset {
            let s = d.get(id).ok_or(Error::UnknownSentence(id))?;
            if s.len() != rows {
                return Err(Error::Dimension(format!(
                    "sentence {id}: {rows} emission rows for {} tokens",
                    s.len()
                )));
            }
        }
        let emissions = Array2::from_shape_vec((rows, n_labels), values)
            .map_err(|e| Error::Dimension(format!("sentence {id}: {e}")))?;
        blocks.push(SentenceEmissions { id, emissions });
        Ok(())
    };

    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            finish(current.take(), &mut blocks)?;
            continue;
        }
        if let Some(id) = line.strip_prefix("sentence ") {
            finish(current.take(), &mut blocks)?;
            let id = id.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad sentence id {id:?}"),
            })?;
            current = Some((id, Vec::new(), 0));
            continue;
        }
        let Some((id, values, rows)) = current.as_mut() else {
            return Err(Error::Parse {
                line: i + 1,
                message: "emission row outside a sentence block".into(),
            });
        };
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse {
                line: i + 1,
                message: "bad emission value".into(),
            })?;
        if row.len() != n_labels {
            return Err(Error::Dimension(format!(
                "sentence {id}: row has {} values, expected {n_labels} labels",
                row.len()
            )));
        }
        values.extend(row);
        *rows += 1;
    }
    finish(current.take(), &mut blocks)?;
    Ok(blocks)
}
