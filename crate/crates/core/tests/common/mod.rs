//! Shared helpers: random lattices and exhaustive-enumeration oracles.
#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqal::crf::Lattice;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_lattice(rng: &mut impl Rng, n: usize, l: usize, scale: f64) -> Lattice {
    let e = Array2::from_shape_fn((n, l), |_| rng.random_range(-scale..scale));
    let a = Array2::from_shape_fn((l, l), |_| rng.random_range(-scale..scale));
    Lattice::new(e, a).unwrap()
}

/// Every label sequence of length `n` over `l` labels, in lexicographic order.
pub fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

pub struct Enumerated {
    pub z: f64,
    pub best: Vec<usize>,
    pub best_score: f64,
    pub marginals: Array2<f64>,
    pub pairwise: Array3<f64>,
}

/// Partition function, argmax path and marginals by summing over all paths.
pub fn enumerate(lat: &Lattice) -> Enumerated {
    let (n, l) = lat.emissions.dim();
    let paths = all_paths(n, l);
    let scores: Vec<f64> = paths.iter().map(|p| lat.score(p)).collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let (mut best, mut best_score) = (paths[0].clone(), f64::NEG_INFINITY);
    for (p, &s) in paths.iter().zip(&scores) {
        if s > best_score {
            best = p.clone();
            best_score = s;
        }
    }
    let mut marginals = Array2::zeros((n, l));
    let mut pairwise = Array3::zeros((n.saturating_sub(1), l, l));
    for (p, &s) in paths.iter().zip(&scores) {
        let w = s.exp() / z;
        for (i, &y) in p.iter().enumerate() {
            marginals[[i, y]] += w;
        }
        for k in 0..n.saturating_sub(1) {
            pairwise[[k, p[k], p[k + 1]]] += w;
        }
    }
    Enumerated {
        z,
        best,
        best_score,
        marginals,
        pairwise,
    }
}
