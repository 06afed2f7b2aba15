use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{CrfModel, Lattice};
use crate::error::Result;
use crate::features::FeaturizedSentence;

/// `log(sum(exp(xs)))`, stable for large magnitudes; `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a score matrix.
pub fn softmax_rows(scores: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        let lz = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| (v - lz).exp());
    }
    out
}

/// Output of forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub log_z: f64,
    /// `[N x L]`, `P(y_i = j | x)`.
    pub marginals: Array2<f64>,
    /// `[N-1 x L x L]`, `P(y_k = a, y_{k+1} = b | x)`.
    pub pairwise: Array3<f64>,
}

/// Forward and backward log-messages for one lattice.
pub(crate) struct Messages {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub log_z: f64,
}

/// `exp(A[k][j] - max_k A[k][j])` plus the column maxima. Columns that are
/// entirely `-inf` get a zero column and a `-inf` maximum.
fn shifted_transitions(a: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let l = a.nrows();
    let col_max: Vec<f64> = (0..l)
        .map(|j| {
            a.column(j)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let exp_a = Array2::from_shape_fn((l, l), |(k, j)| {
        if col_max[j] == f64::NEG_INFINITY {
            0.0
        } else {
            (a[[k, j]] - col_max[j]).exp()
        }
    });
    (exp_a, col_max)
}

/// Log-space forward-backward.
///
/// Each step shifts the incoming messages by their maximum before
/// exponentiating, so no intermediate over- or underflows for realistic
/// potentials. If a shifted sum still underflows to zero the step is redone
/// term by term with [`log_sum_exp`].
pub(crate) fn messages(lat: &Lattice) -> Messages {
    let (n, l) = lat.emissions.dim();
    let e = &lat.emissions;
    let a = &lat.transitions;
    let (exp_a, col_max) = shifted_transitions(a);
    let mut scaled = vec![0.0; l];

    let mut alpha = Array2::<f64>::zeros((n, l));
    alpha.row_mut(0).assign(&e.row(0));
    for i in 1..n {
        let m = alpha
            .row(i - 1)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for k in 0..l {
            scaled[k] = (alpha[[i - 1, k]] - m).exp();
        }
        for j in 0..l {
            let s: f64 = (0..l).map(|k| scaled[k] * exp_a[[k, j]]).sum();
            let incoming = if s > 0.0 && s.is_finite() {
                m + col_max[j] + s.ln()
            } else {
                log_sum_exp((0..l).map(|k| alpha[[i - 1, k]] + a[[k, j]]))
            };
            alpha[[i, j]] = e[[i, j]] + incoming;
        }
    }

    let mut beta = Array2::<f64>::zeros((n, l));
    let mut next = vec![0.0; l];
    for i in (0..n - 1).rev() {
        for k in 0..l {
            next[k] = e[[i + 1, k]] + beta[[i + 1, k]] + col_max[k];
        }
        let m = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for k in 0..l {
            scaled[k] = if next[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (next[k] - m).exp()
            };
        }
        for j in 0..l {
            let s: f64 = (0..l).map(|k| exp_a[[j, k]] * scaled[k]).sum();
            beta[[i, j]] = if s > 0.0 && s.is_finite() {
                m + s.ln()
            } else {
                log_sum_exp((0..l).map(|k| a[[j, k]] + e[[i + 1, k]] + beta[[i + 1, k]]))
            };
        }
    }

    let log_z = log_sum_exp(alpha.row(n - 1).iter().copied());
    Messages { alpha, beta, log_z }
}

impl Messages {
    pub fn marginals(&self) -> Array2<f64> {
        let (n, l) = self.alpha.dim();
        Array2::from_shape_fn((n, l), |(i, j)| {
            (self.alpha[[i, j]] + self.beta[[i, j]] - self.log_z).exp()
        })
    }

    /// `P(y_k = p, y_{k+1} = q | x)`.
    pub fn pairwise_at(&self, lat: &Lattice, k: usize, p: usize, q: usize) -> f64 {
        (self.alpha[[k, p]]
            + lat.transitions[[p, q]]
            + lat.emissions[[k + 1, q]]
            + self.beta[[k + 1, q]]
            - self.log_z)
            .exp()
    }
}

/// Log partition function plus unary and pairwise marginals.
pub fn forward_backward(lat: &Lattice) -> Posteriors {
    let (n, l) = lat.emissions.dim();
    let msg = messages(lat);
    let pairwise = Array3::from_shape_fn((n.saturating_sub(1), l, l), |(k, p, q)| {
        msg.pairwise_at(lat, k, p, q)
    });
    Posteriors {
        log_z: msg.log_z,
        marginals: msg.marginals(),
        pairwise,
    }
}

/// Highest-scoring path and its unnormalized log-score.
///
/// Ties go to the lower label index, both for the final label and at every
/// back-pointer.
pub fn viterbi(lat: &Lattice) -> (Vec<usize>, f64) {
    let (n, l) = lat.emissions.dim();
    let e = &lat.emissions;
    let a = &lat.transitions;
    let mut delta = Array2::<f64>::zeros((n, l));
    let mut back = Array2::<usize>::zeros((n, l));
    delta.row_mut(0).assign(&e.row(0));
    for i in 1..n {
        for j in 0..l {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for k in 0..l {
                let s = delta[[i - 1, k]] + a[[k, j]];
                if s > best {
                    best = s;
                    arg = k;
                }
            }
            delta[[i, j]] = best + e[[i, j]];
            back[[i, j]] = arg;
        }
    }
    let (mut last, mut best) = (0, f64::NEG_INFINITY);
    for j in 0..l {
        if delta[[n - 1, j]] > best {
            best = delta[[n - 1, j]];
            last = j;
        }
    }
    let mut path = vec![last; n];
    for i in (1..n).rev() {
        path[i - 1] = back[[i, path[i]]];
    }
    (path, best)
}

/// Everything the selection strategies need about one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Viterbi path as label indices.
    pub path: Vec<usize>,
    pub path_logscore: f64,
    pub log_z: f64,
    /// `[N x L]` posterior marginals.
    pub marginals: Array2<f64>,
    /// `[N x L]` per-position softmax of the emission scores alone.
    pub emission_softmax: Array2<f64>,
}

impl DecodeResult {
    pub fn from_lattice(lat: &Lattice) -> Self {
        let (path, path_logscore) = viterbi(lat);
        let msg = messages(lat);
        Self {
            path,
            path_logscore,
            log_z: msg.log_z,
            marginals: msg.marginals(),
            emission_softmax: softmax_rows(lat.emissions.view()),
        }
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    /// `P(y* | x)`.
    pub fn sequence_probability(&self) -> f64 {
        (self.path_logscore - self.log_z).exp().min(1.0)
    }

    /// Posterior marginal of the Viterbi label at every position.
    pub fn path_marginals(&self) -> Vec<f64> {
        self.path
            .iter()
            .enumerate()
            .map(|(i, &j)| self.marginals[[i, j]])
            .collect()
    }

    /// Position whose Viterbi label has the smallest marginal (lowest index on ties).
    pub fn weakest_position(&self) -> usize {
        let probs = self.path_marginals();
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p < probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn marginal_sums(&self) -> Vec<f64> {
        self.marginals.sum_axis(Axis(1)).to_vec()
    }
}

pub fn decode(m: &CrfModel, fs: &FeaturizedSentence) -> Result<DecodeResult> {
    Ok(DecodeResult::from_lattice(&m.build_lattice(fs)?))
}
