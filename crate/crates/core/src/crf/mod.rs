//! Linear-chain CRF over sparse features.
//!
//! A tag sequence `y` for a sentence of length `N` scores
//!
//! ```text
//! score(y) = h[0][y0] + sum_{k=1}^{N-1} ( h[k][yk] + A[y(k-1)][yk] )
//! ```
//!
//! where `h[k][j]` is the emission log-potential (a sum of feature weights)
//! and `A` the learned transition matrix. `P(y|x) = exp(score(y) - log Z(x))`.
//! All inference runs in log space.

mod inference;
mod io;
mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Tag;
use crate::error::{Error, Result};
use crate::features::FeaturizedSentence;

pub use inference::{
    decode, forward_backward, log_sum_exp, softmax_rows, viterbi, DecodeResult, Posteriors,
};
pub use io::{read_emissions, read_model, write_emissions, write_model, SentenceEmissions};
pub use train::{log_likelihood_and_gradient, train, train_with_report, TrainConfig, TrainReport};

/// Label vocabulary for a schema: `O`, then `B-X`, `I-X` for each type in order.
pub fn label_list(schema: &[String]) -> Vec<Tag> {
    std::iter::once(Tag::Outside)
        .chain(
            schema
                .iter()
                .flat_map(|e| [Tag::begin(e.clone()), Tag::inside(e.clone())]),
        )
        .collect()
}

/// Whether `to` may follow `from` under the BIO rules.
pub fn bio_transition_allowed(from: &Tag, to: &Tag) -> bool {
    match to {
        Tag::Inside(e) => from.etype() == Some(e.as_str()),
        _ => true,
    }
}

/// Emission weights, transitions and the label vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    labels: Vec<Tag>,
    /// `[n_features x n_labels]`
    weights: Array2<f64>,
    /// `[n_labels x n_labels]`, row = previous label.
    transitions: Array2<f64>,
    l2_sigma: f64,
    /// Forbid invalid BIO transitions (and `I-X` at position 0) in every lattice.
    constrain_bio: bool,
}

impl CrfModel {
    pub fn zeros(labels: Vec<Tag>, n_features: usize, l2_sigma: f64) -> Result<Self> {
        let l = labels.len();
        Self::from_parts(
            labels,
            Array2::zeros((n_features, l)),
            Array2::zeros((l, l)),
            l2_sigma,
        )
    }

    pub fn from_parts(
        labels: Vec<Tag>,
        weights: Array2<f64>,
        transitions: Array2<f64>,
        l2_sigma: f64,
    ) -> Result<Self> {
        let l = labels.len();
        if l == 0 {
            return Err(Error::Dimension("label list is empty".into()));
        }
        if weights.ncols() != l || transitions.dim() != (l, l) {
            return Err(Error::Dimension(format!(
                "weights {:?} / transitions {:?} do not match {l} labels",
                weights.dim(),
                transitions.dim()
            )));
        }
        if !(l2_sigma > 0.0 && l2_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "l2_sigma must be positive, got {l2_sigma}"
            )));
        }
        if weights
            .iter()
            .chain(transitions.iter())
            .any(|w| !w.is_finite())
        {
            return Err(Error::Diverged("non-finite model parameter".into()));
        }
        Ok(Self {
            labels,
            weights,
            transitions,
            l2_sigma,
            constrain_bio: false,
        })
    }

    pub fn with_bio_constraints(mut self, on: bool) -> Self {
        self.constrain_bio = on;
        self
    }

    pub fn labels(&self) -> &[Tag] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn transitions(&self) -> ArrayView2<'_, f64> {
        self.transitions.view()
    }

    pub fn l2_sigma(&self) -> f64 {
        self.l2_sigma
    }

    pub fn constrain_bio(&self) -> bool {
        self.constrain_bio
    }

    pub fn label_index(&self, tag: &Tag) -> Option<usize> {
        self.labels.iter().position(|t| t == tag)
    }

    pub fn encode_tags(&self, tags: &[Tag]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.label_index(t)
                    .ok_or_else(|| Error::Dimension(format!("tag {t} is not in the label list")))
            })
            .collect()
    }

    pub fn decode_tags(&self, path: &[usize]) -> Vec<Tag> {
        path.iter().map(|&j| self.labels[j].clone()).collect()
    }

    /// Squared L2 norm of all parameters.
    pub fn norm_sq(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.transitions.iter())
            .map(|w| w * w)
            .sum()
    }

    /// Parameters flattened as `[weights row-major, transitions row-major]`.
    pub(crate) fn to_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.transitions.iter())
            .copied()
            .collect()
    }

    pub(crate) fn set_flat(&mut self, theta: &[f64]) {
        let split = self.weights.len();
        for (w, v) in self.weights.iter_mut().zip(&theta[..split]) {
            *w = *v;
        }
        for (a, v) in self.transitions.iter_mut().zip(&theta[split..]) {
            *a = *v;
        }
    }

    fn effective_transitions(&self) -> Array2<f64> {
        let mut a = self.transitions.clone();
        if self.constrain_bio {
            for (i, from) in self.labels.iter().enumerate() {
                for (j, to) in self.labels.iter().enumerate() {
                    if !bio_transition_allowed(from, to) {
                        a[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        a
    }

    fn mask_start(&self, emissions: &mut Array2<f64>) {
        if self.constrain_bio {
            for (j, tag) in self.labels.iter().enumerate() {
                if matches!(tag, Tag::Inside(_)) {
                    emissions[[0, j]] = f64::NEG_INFINITY;
                }
            }
        }
    }

    /// Emission scores are sums of the weights of the features active at each position.
    pub fn build_lattice(&self, fs: &FeaturizedSentence) -> Result<Lattice> {
        let emissions = emission_scores(self.weights.view(), fs)?;
        self.lattice_from_emissions(emissions)
    }

    /// Uses externally computed emission log-scores; transitions still come from the model.
    pub fn lattice_from_emissions(&self, mut emissions: Array2<f64>) -> Result<Lattice> {
        if emissions.ncols() != self.n_labels() {
            return Err(Error::Dimension(format!(
                "emissions have {} columns, model has {} labels",
                emissions.ncols(),
                self.n_labels()
            )));
        }
        self.mask_start(&mut emissions);
        Lattice::new(emissions, self.effective_transitions())
    }
}

pub(crate) fn emission_scores(
    weights: ArrayView2<'_, f64>,
    fs: &FeaturizedSentence,
) -> Result<Array2<f64>> {
    let (n_features, l) = weights.dim();
    let mut out = Array2::zeros((fs.len(), l));
    for (i, feats) in fs.positions.iter().enumerate() {
        let mut row = out.row_mut(i);
        for &f in feats {
            let f = f as usize;
            if f >= n_features {
                return Err(Error::Dimension(format!(
                    "sentence {}: feature id {f} >= {n_features}",
                    fs.id
                )));
            }
            row += &weights.row(f);
        }
    }
    Ok(out)
}

/// Per-position emission log-scores plus transition log-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    /// `[N x L]`
    pub emissions: Array2<f64>,
    /// `[L x L]`, row = previous label.
    pub transitions: Array2<f64>,
}

impl Lattice {
    /// Entries may be `-inf` (forbidden) but never NaN or `+inf`.
    pub fn new(emissions: Array2<f64>, transitions: Array2<f64>) -> Result<Self> {
        let (n, l) = emissions.dim();
        if n == 0 || l == 0 {
            return Err(Error::Dimension(
                "lattice needs at least one position and label".into(),
            ));
        }
        if transitions.dim() != (l, l) {
            return Err(Error::Dimension(format!(
                "transitions {:?} do not match {l} labels",
                transitions.dim()
            )));
        }
        if emissions
            .iter()
            .chain(transitions.iter())
            .any(|v| v.is_nan() || *v == f64::INFINITY)
        {
            return Err(Error::Dimension("lattice contains NaN or +inf".into()));
        }
        Ok(Self {
            emissions,
            transitions,
        })
    }

    pub fn len(&self) -> usize {
        self.emissions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.nrows() == 0
    }

    pub fn n_labels(&self) -> usize {
        self.emissions.ncols()
    }

    /// Unnormalized log-score of a full path.
    pub fn score(&self, path: &[usize]) -> f64 {
        let mut s = self.emissions[[0, path[0]]];
        for k in 1..path.len() {
            s += self.emissions[[k, path[k]]] + self.transitions[[path[k - 1], path[k]]];
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fs(positions: Vec<Vec<u32>>) -> FeaturizedSentence {
        FeaturizedSentence { id: 0, positions }
    }

    #[test]
    fn label_list_order() {
        let labels = label_list(&["PER".to_string(), "LOC".to_string()]);
        let raw: Vec<String> = labels.iter().map(Tag::to_string).collect();
        assert_eq!(raw, ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]);
    }

    #[test]
    fn zero_weights_give_zero_lattice() {
        let m = CrfModel::zeros(label_list(&["A".into()]), 4, 1.0).unwrap();
        let lat = m.build_lattice(&fs(vec![vec![0, 1], vec![0, 3]])).unwrap();
        assert!(lat.emissions.iter().all(|&v| v == 0.0));
        assert!(lat.transitions.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_weight_lands_on_its_cell() {
        let mut w = Array2::zeros((3, 2));
        w[[2, 1]] = 2.0;
        let m = CrfModel::from_parts(
            vec![Tag::Outside, Tag::begin("A")],
            w,
            Array2::zeros((2, 2)),
            1.0,
        )
        .unwrap();
        let lat = m.build_lattice(&fs(vec![vec![2], vec![0]])).unwrap();
        assert_eq!(lat.emissions, array![[0.0, 2.0], [0.0, 0.0]]);
    }

    #[test]
    fn lattice_matches_brute_force_feature_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (nf, l, n) = (
                rng.random_range(1..12),
                rng.random_range(1..5),
                rng.random_range(1..7),
            );
            let w = Array2::from_shape_fn((nf, l), |_| rng.random_range(-2.0..2.0));
            let positions: Vec<Vec<u32>> = (0..n)
                .map(|_| {
                    let mut v: Vec<u32> = (0..nf as u32).filter(|_| rng.random_bool(0.4)).collect();
                    v.dedup();
                    v
                })
                .collect();
            let labels: Vec<Tag> = (0..l).map(|j| Tag::begin(format!("T{j}"))).collect();
            let m = CrfModel::from_parts(labels, w.clone(), Array2::zeros((l, l)), 1.0).unwrap();
            let lat = m.build_lattice(&fs(positions.clone())).unwrap();
            for (i, fired) in positions.iter().enumerate() {
                for j in 0..l {
                    let mut expected = 0.0;
                    for &f in fired {
                        expected += w[[f as usize, j]];
                    }
                    assert!((lat.emissions[[i, j]] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let m = CrfModel::zeros(label_list(&["A".into()]), 2, 1.0).unwrap();
        assert!(m.build_lattice(&fs(vec![vec![5]])).is_err());
        assert!(m.lattice_from_emissions(Array2::zeros((2, 4))).is_err());
        assert!(CrfModel::zeros(vec![], 2, 1.0).is_err());
        assert!(CrfModel::zeros(label_list(&[]), 2, 0.0).is_err());
    }

    #[test]
    fn bio_constraints_forbid_orphan_inside() {
        let m = CrfModel::zeros(label_list(&["A".into(), "B".into()]), 1, 1.0)
            .unwrap()
            .with_bio_constraints(true);
        let lat = m.build_lattice(&fs(vec![vec![0], vec![0]])).unwrap();
        // I-A at start, O -> I-A, B-B -> I-A are forbidden
        assert_eq!(lat.emissions[[0, 2]], f64::NEG_INFINITY);
        assert_eq!(lat.transitions[[0, 2]], f64::NEG_INFINITY);
        assert_eq!(lat.transitions[[3, 2]], f64::NEG_INFINITY);
        assert_eq!(lat.transitions[[1, 2]], 0.0);
        let d = decode(&m, &fs(vec![vec![0], vec![0]])).unwrap();
        assert!(crate::corpus::validate_bio(&m.decode_tags(&d.path)).is_ok());
        let p: f64 =
            d.marginals.column(2).iter().sum::<f64>() + d.marginals.column(4).iter().sum::<f64>();
        assert!(p > 0.0);
    }
}
