//! Query strategies: score unlabeled sentences and pick the next batch.
//!
//! Every uncertainty score is `1 - confidence` and lies in `[0, 1]`:
//!
//! | strategy | confidence |
//! |----------|------------|
//! | LC       | `P(y*|x)` |
//! | NLC      | `P(y*|x)^(1/n)` (geometric mean) or `P(y*|x) / n` (literal) |
//! | MTP      | `min_i max_j h[i][j]` |
//! | LTP      | `min_i h[i][y*_i]` |
//!
//! `h` is either the CRF posterior marginal or the per-position softmax of
//! the emission scores, selected by [`HMode`]. RAND draws uniform scores.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::DecodeResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RAND")]
    Rand,
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "NLC")]
    Nlc,
    #[serde(rename = "MTP")]
    Mtp,
    #[serde(rename = "LTP")]
    Ltp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Rand,
        Strategy::Lc,
        Strategy::Nlc,
        Strategy::Mtp,
        Strategy::Ltp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Rand => "RAND",
            Strategy::Lc => "LC",
            Strategy::Nlc => "NLC",
            Strategy::Mtp => "MTP",
            Strategy::Ltp => "LTP",
        }
    }

    /// Whether scoring needs a decoded sentence.
    pub fn needs_decoding(self) -> bool {
        self != Strategy::Rand
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?} (expected RAND, LC, NLC, MTP or LTP)"
                ))
            })
    }
}

/// Which per-token probability table the token-level strategies read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HMode {
    #[default]
    PosteriorMarginal,
    EmissionSoftmax,
}

/// How NLC normalizes the sequence probability by length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlcMode {
    /// `1 - exp(log P(y*|x) / n)`
    #[default]
    GeometricMean,
    /// `1 - P(y*|x) / n`
    Literal,
}

macro_rules! snake_enum_str {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    _ => Err(Error::Config(format!("unknown {} {s:?}", stringify!($ty)))),
                }
            }
        }
    };
}

snake_enum_str!(HMode { PosteriorMarginal => "posterior_marginal", EmissionSoftmax => "emission_softmax" });
snake_enum_str!(NlcMode { GeometricMean => "geometric_mean", Literal => "literal" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub h_mode: HMode,
    #[serde(default)]
    pub nlc_mode: NlcMode,
    /// Seeds the RAND baseline.
    #[serde(default)]
    pub seed: u64,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            h_mode: HMode::default(),
            nlc_mode: NlcMode::default(),
            seed: 0,
        }
    }
}

/// One sentence's informativeness under one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub id: usize,
    pub strategy: Strategy,
    pub score: f64,
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn h_table(dr: &DecodeResult, mode: HMode) -> ArrayView2<'_, f64> {
    match mode {
        HMode::PosteriorMarginal => dr.marginals.view(),
        HMode::EmissionSoftmax => dr.emission_softmax.view(),
    }
}

/// Least confidence: `1 - P(y*|x)`.
pub fn score_lc(dr: &DecodeResult) -> f64 {
    unit(1.0 - (dr.path_logscore - dr.log_z).exp())
}

/// Normalized least confidence for a sentence of length `n`.
pub fn score_nlc(dr: &DecodeResult, n: usize, mode: NlcMode) -> f64 {
    let n = n.max(1) as f64;
    let log_p = (dr.path_logscore - dr.log_z).min(0.0);
    match mode {
        NlcMode::GeometricMean => unit(1.0 - (log_p / n).exp()),
        NlcMode::Literal => unit(1.0 - log_p.exp() / n),
    }
}

/// Minimum token probability: `1 - min_i max_j h[i][j]`.
pub fn score_mtp(dr: &DecodeResult, h_mode: HMode) -> f64 {
    let h = h_table(dr, h_mode);
    let confidence = h
        .rows()
        .into_iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min);
    unit(1.0 - confidence)
}

/// Lowest token probability along the Viterbi path: `1 - min_i h[i][y*_i]`.
pub fn score_ltp(dr: &DecodeResult, h_mode: HMode) -> f64 {
    let h = h_table(dr, h_mode);
    let confidence = dr
        .path
        .iter()
        .enumerate()
        .map(|(i, &j)| h[[i, j]])
        .fold(f64::INFINITY, f64::min);
    unit(1.0 - confidence)
}

/// Uniform draw in `[0, 1)`.
pub fn score_rand(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}

/// Scores one decoded sentence under an uncertainty strategy. `None` for RAND.
pub fn uncertainty(dr: &DecodeResult, cfg: &StrategyConfig) -> Option<f64> {
    match cfg.strategy {
        Strategy::Rand => None,
        Strategy::Lc => Some(score_lc(dr)),
        Strategy::Nlc => Some(score_nlc(dr, dr.len(), cfg.nlc_mode)),
        Strategy::Mtp => Some(score_mtp(dr, cfg.h_mode)),
        Strategy::Ltp => Some(score_ltp(dr, cfg.h_mode)),
    }
}

/// Scores a pool. `decoded` must be sorted by id; RAND consumes `rng` in that order
/// and ignores the decode results.
pub fn score_pool(
    decoded: &[(usize, Option<&DecodeResult>)],
    cfg: &StrategyConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SelectionScore>> {
    decoded
        .iter()
        .map(|(id, dr)| {
            let score = match cfg.strategy {
                Strategy::Rand => score_rand(rng),
                _ => {
                    let dr =
                        dr.ok_or_else(|| Error::Config(format!("sentence {id} was not decoded")))?;
                    uncertainty(dr, cfg).expect("uncertainty strategy")
                }
            };
            Ok(SelectionScore {
                id: *id,
                strategy: cfg.strategy,
                score,
            })
        })
        .collect()
}

fn rank(a: &SelectionScore, b: &SelectionScore) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Ids of the `b` highest scores, best first; equal scores go to the lower id.
pub fn select_batch(scores: &[SelectionScore], b: usize) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Empty("cannot select from an empty pool".into()));
    }
    if b == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut ranked: Vec<&SelectionScore> = scores.iter().collect();
    ranked.sort_by(|x, y| rank(x, y));
    Ok(ranked.into_iter().take(b).map(|s| s.id).collect())
}
