//! Penalized maximum-likelihood training with L-BFGS.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::messages;
use super::{emission_scores, CrfModel};
use crate::error::{Error, Result};
use crate::features::FeaturizedSentence;

/// Sentences per gradient work unit. Fixed so that floating-point summation
/// order, and therefore the trained model, does not depend on thread count.
const CHUNK: usize = 64;

/// `sum_l log P(y_l | x_l) - ||theta||^2 / (2 sigma^2)` and its gradient.
///
/// The gradient is laid out like the flattened parameters: emission weights
/// row-major (`feature * n_labels + label`), then transitions row-major.
pub fn log_likelihood_and_gradient(
    m: &CrfModel,
    batch: &[(FeaturizedSentence, Vec<usize>)],
) -> Result<(f64, Vec<f64>)> {
    objective(m, &m.to_flat(), batch)
}

fn sentence_terms(
    m: &CrfModel,
    fs: &FeaturizedSentence,
    gold: &[usize],
    grad: &mut [f64],
) -> Result<f64> {
    let l = m.n_labels();
    let n_w = m.n_features() * l;
    if gold.len() != fs.len() || fs.is_empty() {
        return Err(Error::Dimension(format!(
            "sentence {}: {} gold labels for {} positions",
            fs.id,
            gold.len(),
            fs.len()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= l) {
        return Err(Error::Dimension(format!(
            "sentence {}: label {bad} >= {l}",
            fs.id
        )));
    }
    let lat = m.lattice_from_emissions(emission_scores(m.weights(), fs)?)?;
    let msg = messages(&lat);
    let marginals = msg.marginals();
    let gold_score = lat.score(gold);
    if !gold_score.is_finite() {
        return Err(Error::Dimension(format!(
            "sentence {}: gold path is forbidden by the BIO constraints",
            fs.id
        )));
    }

    for (i, feats) in fs.positions.iter().enumerate() {
        let marg = marginals.row(i);
        for &f in feats {
            let base = f as usize * l;
            grad[base + gold[i]] += 1.0;
            for (j, p) in marg.iter().enumerate() {
                grad[base + j] -= p;
            }
        }
    }
    for k in 0..gold.len().saturating_sub(1) {
        grad[n_w + gold[k] * l + gold[k + 1]] += 1.0;
        for a in 0..l {
            for b in 0..l {
                grad[n_w + a * l + b] -= msg.pairwise_at(&lat, k, a, b);
            }
        }
    }
    Ok(gold_score - msg.log_z)
}

fn objective(
    m: &CrfModel,
    theta: &[f64],
    batch: &[(FeaturizedSentence, Vec<usize>)],
) -> Result<(f64, Vec<f64>)> {
    let n = theta.len();
    let mut current = m.clone();
    current.set_flat(theta);
    let m = &current;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            let mut value = 0.0;
            for (fs, gold) in chunk {
                value += sentence_terms(m, fs, gold, &mut grad)?;
            }
            Ok((value, grad))
        })
        .collect();

    let inv_var = 1.0 / (m.l2_sigma() * m.l2_sigma());
    let mut value = -0.5 * inv_var * theta.iter().map(|t| t * t).sum::<f64>();
    let mut grad: Vec<f64> = theta.iter().map(|t| -t * inv_var).collect();
    for part in parts {
        let (v, g) = part?;
        value += v;
        for (acc, x) in grad.iter_mut().zip(&g) {
            *acc += x;
        }
    }
    Ok((value, grad))
}

/// L-BFGS settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iterations: usize,
    /// Stop when `||grad|| <= grad_tolerance * max(1, ||theta||)`.
    pub grad_tolerance: f64,
    /// Stop when an accepted step improves the objective by less than this, relatively.
    pub rel_improvement_tolerance: f64,
    /// Number of correction pairs kept.
    pub history: usize,
    pub max_line_search: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            grad_tolerance: 1e-5,
            rel_improvement_tolerance: 1e-7,
            history: 7,
            max_line_search: 40,
        }
    }
}

/// What happened during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// Penalized log-likelihood after every accepted step, starting with the initial value.
    pub objective: Vec<f64>,
    pub final_grad_norm: f64,
    pub converged: bool,
}

pub fn train(
    init: &CrfModel,
    labeled: &[(FeaturizedSentence, Vec<usize>)],
    cfg: &TrainConfig,
) -> Result<CrfModel> {
    train_with_report(init, labeled, cfg).map(|(m, _)| m)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximizes the penalized log-likelihood from `init`.
///
/// Works on the negated objective. Every accepted step satisfies the Armijo
/// condition, so the objective increases monotonically.
pub fn train_with_report(
    init: &CrfModel,
    labeled: &[(FeaturizedSentence, Vec<usize>)],
    cfg: &TrainConfig,
) -> Result<(CrfModel, TrainReport)> {
    if labeled.is_empty() {
        return Err(Error::Empty(
            "training needs at least one labeled sentence".into(),
        ));
    }
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = objective(init, theta, labeled)?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    };

    let mut theta = init.to_flat();
    let (mut f, mut g) = eval(&theta)?;
    if !f.is_finite() {
        return Err(Error::Diverged(format!("initial objective is {f}")));
    }
    let mut report = TrainReport {
        iterations: 0,
        objective: vec![-f],
        final_grad_norm: norm(&g),
        converged: false,
    };
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);

    for iter in 0..cfg.max_iterations {
        let gnorm = norm(&g);
        if gnorm <= cfg.grad_tolerance * norm(&theta).max(1.0) {
            report.converged = true;
            break;
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|x| *x *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // not a descent direction: restart from steepest descent
            pairs.clear();
            d = g.iter().map(|x| -x).collect();
            slope = -gnorm * gnorm;
        }

        let mut step = if pairs.is_empty() {
            1.0 / gnorm.max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..cfg.max_line_search {
            let trial: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + step * di).collect();
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            if !f.is_finite() {
                return Err(Error::Diverged("objective became non-finite".into()));
            }
            // no further decrease representable along this direction
            report.converged = true;
            break;
        };

        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let improvement = f - f_next;
        theta = next;
        f = f_next;
        g = g_next;
        report.iterations = iter + 1;
        report.objective.push(-f);
        if improvement <= cfg.rel_improvement_tolerance * f.abs().max(1.0) {
            report.converged = true;
            break;
        }
    }
    if !f.is_finite() || theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Diverged(
            "non-finite parameters after training".into(),
        ));
    }
    report.final_grad_norm = norm(&g);
    let mut model = init.clone();
    model.set_flat(&theta);
    Ok((model, report))
}
