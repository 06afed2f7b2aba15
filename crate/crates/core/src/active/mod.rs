//! Pool-based active learning.
//!
//! A [`Learner`] owns the labeled/pool partition and the current model. Each
//! call to [`Learner::run_iteration`] decodes the pool with the current
//! model, scores and selects a batch, asks an [`Oracle`] for labels, moves
//! the batch into the labeled set, retrains, and evaluates on the test split.
//! History entry 0 is the baseline trained on the seed set alone, so entry
//! `k` describes the model trained after `k` batches.

mod experiment;
mod human;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_bio, Dataset, Tag};
use crate::crf::{decode, label_list, train, CrfModel, DecodeResult, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{
    build_feature_index, featurize_sentence, FeatureIndex, FeatureTemplate, FeaturizedSentence,
};
use crate::metrics::{
    entity_f1, entity_type_counts, sampling_offset, sentence_accuracy, token_f1,
    DistributionSnapshot, Prf,
};
use crate::strategies::{score_pool, select_batch, HMode, StrategyConfig};

pub use experiment::{
    prepare_dataset, run_experiment, run_experiment_resumable, DatasetSource, ExperimentConfig,
    ExperimentLog, SeedRun,
};
pub use human::{
    Clock, HumanOracle, ManualClock, Phase, SubmitError, SystemClock, Task, TaskBoard, TaskStatus,
    TaskView, DEFAULT_LEASE,
};

/// A dataset with its frozen feature index and every sentence featurized once.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub dataset: Dataset,
    pub index: FeatureIndex,
    pub labels: Vec<Tag>,
    features: BTreeMap<usize, FeaturizedSentence>,
}

impl PreparedCorpus {
    /// Builds the feature index over the tokens of the whole dataset. Labels
    /// are never consulted, so pool and test sentences contribute only
    /// feature names (which start at zero weight).
    pub fn new(dataset: Dataset, templates: &[FeatureTemplate]) -> Result<Self> {
        let index = build_feature_index(&dataset, templates);
        let features = dataset
            .sentences
            .par_iter()
            .map(|s| featurize_sentence(s, &index).map(|f| (s.id, f)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let labels = label_list(&dataset.schema);
        Ok(Self {
            dataset,
            index,
            labels,
            features,
        })
    }

    pub fn features(&self, id: usize) -> Result<&FeaturizedSentence> {
        self.features.get(&id).ok_or(Error::UnknownSentence(id))
    }

    pub fn schema(&self) -> &[String] {
        &self.dataset.schema
    }
}

/// Settings for one active-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub strategy: StrategyConfig,
    pub batch_size: usize,
    pub l2_sigma: f64,
    pub constrain_bio: bool,
    /// Start each retrain from the previous model instead of from zero.
    pub warm_start: bool,
    pub train: TrainConfig,
}

impl LoopConfig {
    pub fn new(strategy: StrategyConfig, batch_size: usize) -> Self {
        Self {
            strategy,
            batch_size,
            l2_sigma: 1.0,
            constrain_bio: true,
            warm_start: false,
            train: TrainConfig::default(),
        }
    }
}

/// Test-set quality of one model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub token: Prf,
    pub entity: Prf,
    pub sentence_accuracy: f64,
}

/// What happened in one iteration. Entry 0 is the seed-set baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Selected ids, most informative first.
    pub selected: Vec<usize>,
    /// Excluded from serialized logs so reruns compare byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
    pub metrics: EvalMetrics,
    /// Entity-type proportions inside this iteration's batch.
    pub distribution: DistributionSnapshot,
    /// L1 distance to the previous batch's distribution; absent before the second batch.
    pub offset: Option<f64>,
    pub labeled_size: usize,
    pub pool_size: usize,
    /// Tokens and entity mentions in the labeled set, seed set included.
    pub cumulative_tokens: usize,
    pub cumulative_entities: usize,
}

impl PartialEq for IterationRecord {
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.selected == other.selected
            && self.metrics == other.metrics
            && self.distribution == other.distribution
            && self.offset == other.offset
            && self.labeled_size == other.labeled_size
            && self.pool_size == other.pool_size
            && self.cumulative_tokens == other.cumulative_tokens
            && self.cumulative_entities == other.cumulative_entities
    }
}

/// Partition, annotations and model of a run in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ALState {
    pub labeled: BTreeSet<usize>,
    pub pool: BTreeSet<usize>,
    /// Tags for every labeled id.
    pub annotations: BTreeMap<usize, Vec<Tag>>,
    pub iteration: usize,
    pub model: CrfModel,
    pub history: Vec<IterationRecord>,
}

/// A sentence sent to an oracle, with the current model's guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub id: usize,
    pub tokens: Vec<String>,
    /// Viterbi tags of the current model.
    pub proposed: Vec<Tag>,
    /// Probability of each proposed tag under the configured `h_mode`.
    pub token_probabilities: Vec<f64>,
}

/// Something that labels sentences.
pub trait Oracle {
    /// One tag sequence per request, in request order.
    fn label(&mut self, requests: &[LabelRequest]) -> Result<Vec<Vec<Tag>>>;
}

/// Answers with the stored gold tags.
#[derive(Debug, Clone, Copy)]
pub struct GoldOracle<'a> {
    dataset: &'a Dataset,
}

impl<'a> GoldOracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self { dataset }
    }

    pub fn query(&self, ids: &[usize]) -> Result<Vec<Vec<Tag>>> {
        ids.iter()
            .map(|&id| {
                self.dataset
                    .get(id)
                    .map(|s| s.tags.clone())
                    .ok_or(Error::UnknownSentence(id))
            })
            .collect()
    }
}

impl Oracle for GoldOracle<'_> {
    fn label(&mut self, requests: &[LabelRequest]) -> Result<Vec<Vec<Tag>>> {
        self.query(&requests.iter().map(|r| r.id).collect::<Vec<_>>())
    }
}

/// Format version of [`Snapshot`] files.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Everything needed to resume a run. The model is stored only for
/// warm-started runs; otherwise it is retrained from the labeled set, which
/// reproduces it exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub config: LoopConfig,
    pub test: Vec<usize>,
    pub labeled: BTreeSet<usize>,
    pub pool: BTreeSet<usize>,
    pub annotations: BTreeMap<usize, Vec<Tag>>,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CrfModel>,
}

impl Snapshot {
    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap: Snapshot = serde_json::from_slice(&std::fs::read(path)?)?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!(
                "snapshot version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        Ok(snap)
    }
}

/// RAND draws for iteration `i` come from their own stream, so a resumed run
/// reproduces them without replaying earlier iterations.
fn selection_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Runs the loop for one split.
#[derive(Debug, Clone)]
pub struct Learner {
    corpus: Arc<PreparedCorpus>,
    config: LoopConfig,
    test: Vec<usize>,
    universe: usize,
    state: ALState,
}

impl Learner {
    /// Trains the baseline on `labeled` (gold tags from the corpus) and records it as iteration 0.
    pub fn new(
        corpus: Arc<PreparedCorpus>,
        labeled: BTreeSet<usize>,
        pool: BTreeSet<usize>,
        test: BTreeSet<usize>,
        config: LoopConfig,
    ) -> Result<Self> {
        let annotations = labeled
            .iter()
            .map(|&id| {
                corpus
                    .dataset
                    .get(id)
                    .map(|s| (id, s.tags.clone()))
                    .ok_or(Error::UnknownSentence(id))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let mut learner = Self::assemble(
            corpus,
            config,
            labeled,
            pool,
            test.into_iter().collect(),
            annotations,
            None,
        )?;
        let start = Instant::now();
        let metrics = learner.evaluate(&learner.state.model)?;
        let (tokens, entities) = learner.labeled_totals()?;
        learner.state.history.push(IterationRecord {
            iteration: 0,
            selected: Vec::new(),
            wall_time: start.elapsed(),
            metrics,
            distribution: DistributionSnapshot::default(),
            offset: None,
            labeled_size: learner.state.labeled.len(),
            pool_size: learner.state.pool.len(),
            cumulative_tokens: tokens,
            cumulative_entities: entities,
        });
        Ok(learner)
    }

    /// Rebuilds a learner from a snapshot taken with [`Learner::snapshot`].
    pub fn resume(corpus: Arc<PreparedCorpus>, snap: Snapshot) -> Result<Self> {
        if snap.config.warm_start && snap.model.is_none() {
            return Err(Error::Format("warm-start snapshot carries no model".into()));
        }
        let mut learner = Self::assemble(
            corpus,
            snap.config,
            snap.labeled,
            snap.pool,
            snap.test,
            snap.annotations,
            snap.model,
        )?;
        if snap.history.len() != snap.iteration + 1 {
            return Err(Error::Format(
                "snapshot history does not match its iteration".into(),
            ));
        }
        learner.state.iteration = snap.iteration;
        learner.state.history = snap.history;
        Ok(learner)
    }

    fn assemble(
        corpus: Arc<PreparedCorpus>,
        config: LoopConfig,
        labeled: BTreeSet<usize>,
        pool: BTreeSet<usize>,
        test: Vec<usize>,
        annotations: BTreeMap<usize, Vec<Tag>>,
        model: Option<CrfModel>,
    ) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if labeled.is_empty() {
            return Err(Error::Config("the initial labeled set is empty".into()));
        }
        if test.is_empty() {
            return Err(Error::Config("the test split is empty".into()));
        }
        for id in labeled.iter().chain(&pool).chain(&test) {
            corpus.features(*id)?;
        }
        let test_set: BTreeSet<usize> = test.iter().copied().collect();
        if !labeled.is_disjoint(&pool)
            || !labeled.is_disjoint(&test_set)
            || !pool.is_disjoint(&test_set)
        {
            return Err(Error::Config(
                "labeled, pool and test ids must be disjoint".into(),
            ));
        }
        if annotations.keys().ne(labeled.iter()) {
            return Err(Error::Config(
                "annotations must cover exactly the labeled ids".into(),
            ));
        }
        let universe = labeled.len() + pool.len();
        let model = match model {
            Some(m) => m,
            None => {
                let init = Self::initial_model(&corpus, &config)?;
                Self::fit(&corpus, &config, &init, &labeled, &annotations)?
            }
        };
        Ok(Self {
            corpus,
            config,
            test,
            universe,
            state: ALState {
                labeled,
                pool,
                annotations,
                iteration: 0,
                model,
                history: Vec::new(),
            },
        })
    }

    fn initial_model(corpus: &PreparedCorpus, config: &LoopConfig) -> Result<CrfModel> {
        Ok(
            CrfModel::zeros(corpus.labels.clone(), corpus.index.len(), config.l2_sigma)?
                .with_bio_constraints(config.constrain_bio),
        )
    }

    fn fit(
        corpus: &PreparedCorpus,
        config: &LoopConfig,
        init: &CrfModel,
        labeled: &BTreeSet<usize>,
        annotations: &BTreeMap<usize, Vec<Tag>>,
    ) -> Result<CrfModel> {
        let batch = labeled
            .iter()
            .map(|id| {
                Ok((
                    corpus.features(*id)?.clone(),
                    init.encode_tags(&annotations[id])?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        train(init, &batch, &config.train)
    }

    pub fn state(&self) -> &ALState {
        &self.state
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.state.history
    }

    pub fn model(&self) -> &CrfModel {
        &self.state.model
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Arc<PreparedCorpus> {
        &self.corpus
    }

    pub fn test_ids(&self) -> &[usize] {
        &self.test
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            config: self.config.clone(),
            test: self.test.clone(),
            labeled: self.state.labeled.clone(),
            pool: self.state.pool.clone(),
            annotations: self.state.annotations.clone(),
            iteration: self.state.iteration,
            history: self.state.history.clone(),
            model: self.config.warm_start.then(|| self.state.model.clone()),
        }
    }

    /// Viterbi tags of `model` for one sentence.
    pub fn predict(&self, model: &CrfModel, id: usize) -> Result<Vec<Tag>> {
        Ok(model.decode_tags(&decode(model, self.corpus.features(id)?)?.path))
    }

    fn evaluate(&self, model: &CrfModel) -> Result<EvalMetrics> {
        let pred = self
            .test
            .par_iter()
            .map(|&id| self.predict(model, id))
            .collect::<Result<Vec<_>>>()?;
        let gold: Vec<Vec<Tag>> = self
            .test
            .iter()
            .map(|&id| {
                self.corpus
                    .dataset
                    .get(id)
                    .expect("checked at construction")
                    .tags
                    .clone()
            })
            .collect();
        Ok(EvalMetrics {
            token: token_f1(&pred, &gold)?,
            entity: entity_f1(&pred, &gold)?,
            sentence_accuracy: sentence_accuracy(&pred, &gold)?,
        })
    }

    fn labeled_totals(&self) -> Result<(usize, usize)> {
        let tokens = self.state.annotations.values().map(Vec::len).sum();
        let entities = entity_type_counts(self.state.annotations.values().map(Vec::as_slice))?
            .values()
            .sum();
        Ok((tokens, entities))
    }

    fn request(&self, id: usize, decoded: Option<&DecodeResult>) -> Result<LabelRequest> {
        let owned;
        let dr = match decoded {
            Some(dr) => dr,
            None => {
                owned = decode(&self.state.model, self.corpus.features(id)?)?;
                &owned
            }
        };
        let h = match self.config.strategy.h_mode {
            HMode::PosteriorMarginal => &dr.marginals,
            HMode::EmissionSoftmax => &dr.emission_softmax,
        };
        let sentence = self
            .corpus
            .dataset
            .get(id)
            .ok_or(Error::UnknownSentence(id))?;
        Ok(LabelRequest {
            id,
            tokens: sentence.tokens.clone(),
            proposed: self.state.model.decode_tags(&dr.path),
            token_probabilities: dr
                .path
                .iter()
                .enumerate()
                .map(|(i, &j)| h[[i, j]])
                .collect(),
        })
    }

    fn check_labels(&self, requests: &[LabelRequest], labels: &[Vec<Tag>]) -> Result<()> {
        if labels.len() != requests.len() {
            return Err(Error::Oracle(format!(
                "{} label sequences for {} requests",
                labels.len(),
                requests.len()
            )));
        }
        for (req, tags) in requests.iter().zip(labels) {
            if tags.len() != req.tokens.len() {
                return Err(Error::Oracle(format!(
                    "sentence {}: {} tags for {} tokens",
                    req.id,
                    tags.len(),
                    req.tokens.len()
                )));
            }
            validate_bio(tags).map_err(|v| Error::InvalidBio {
                sentence: req.id,
                position: v.position,
                message: v.message,
            })?;
            if let Some(tag) = tags
                .iter()
                .find(|t| self.state.model.label_index(t).is_none())
            {
                return Err(Error::InvalidTag(format!("{tag} (sentence {})", req.id)));
            }
        }
        Ok(())
    }

    /// The batch the current model would select next, with label requests.
    pub fn next_batch(&self) -> Result<Vec<LabelRequest>> {
        if self.state.pool.is_empty() {
            return Err(Error::Empty("the pool is exhausted".into()));
        }
        let pool: Vec<usize> = self.state.pool.iter().copied().collect();
        let cfg = &self.config.strategy;
        let decoded: Vec<Option<DecodeResult>> = if cfg.strategy.needs_decoding() {
            pool.par_iter()
                .map(|&id| decode(&self.state.model, self.corpus.features(id)?).map(Some))
                .collect::<Result<_>>()?
        } else {
            vec![None; pool.len()]
        };
        let pairs: Vec<(usize, Option<&DecodeResult>)> = pool
            .iter()
            .copied()
            .zip(decoded.iter().map(Option::as_ref))
            .collect();
        let mut rng = selection_rng(cfg.seed, self.state.iteration + 1);
        let scores = score_pool(&pairs, cfg, &mut rng)?;
        let selected = select_batch(&scores, self.config.batch_size.min(pool.len()))?;
        selected
            .iter()
            .map(|&id| {
                let at = pool.binary_search(&id).expect("selected from pool");
                self.request(id, decoded[at].as_ref())
            })
            .collect()
    }

    /// One round of select, label, retrain, evaluate. On any error the state
    /// is left as it was.
    pub fn run_iteration(&mut self, oracle: &mut dyn Oracle) -> Result<&IterationRecord> {
        let start = Instant::now();
        let requests = self.next_batch()?;
        let labels = oracle.label(&requests)?;
        self.check_labels(&requests, &labels)?;

        let mut labeled = self.state.labeled.clone();
        let mut pool = self.state.pool.clone();
        let mut annotations = self.state.annotations.clone();
        for (req, tags) in requests.iter().zip(&labels) {
            labeled.insert(req.id);
            pool.remove(&req.id);
            annotations.insert(req.id, tags.clone());
        }
        let init = if self.config.warm_start {
            self.state.model.clone()
        } else {
            Self::initial_model(&self.corpus, &self.config)?
        };
        let model = Self::fit(&self.corpus, &self.config, &init, &labeled, &annotations)?;
        let metrics = self.evaluate(&model)?;

        let batch_counts = entity_type_counts(labels.iter().map(Vec::as_slice))?;
        let distribution = DistributionSnapshot::from_counts(&batch_counts, self.corpus.schema());
        let prev = self.state.history.last().expect("baseline recorded");
        let offset =
            (self.state.iteration >= 1).then(|| sampling_offset(&prev.distribution, &distribution));
        let record = IterationRecord {
            iteration: self.state.iteration + 1,
            selected: requests.iter().map(|r| r.id).collect(),
            wall_time: start.elapsed(),
            metrics,
            distribution,
            offset,
            labeled_size: labeled.len(),
            pool_size: pool.len(),
            cumulative_tokens: prev.cumulative_tokens + labels.iter().map(Vec::len).sum::<usize>(),
            cumulative_entities: prev.cumulative_entities + batch_counts.values().sum::<usize>(),
        };

        self.state.labeled = labeled;
        self.state.pool = pool;
        self.state.annotations = annotations;
        self.state.model = model;
        self.state.iteration += 1;
        self.state.history.push(record);
        self.check_invariants();
        Ok(self.state.history.last().expect("just pushed"))
    }

    fn check_invariants(&self) {
        let s = &self.state;
        assert!(s.labeled.is_disjoint(&s.pool), "labeled and pool overlap");
        assert_eq!(
            s.labeled.len() + s.pool.len(),
            self.universe,
            "partition lost sentences"
        );
        let first = s.history[0].labeled_size;
        let moved: usize = s.history.iter().map(|r| r.selected.len()).sum();
        assert_eq!(s.labeled.len(), first + moved, "labeled size drifted");
        assert_eq!(s.history.len(), s.iteration + 1);
    }

    /// Runs until `n_iterations` batches are recorded or the pool runs dry,
    /// calling `after` once per finished iteration.
    pub fn run(
        &mut self,
        n_iterations: usize,
        oracle: &mut dyn Oracle,
        mut after: impl FnMut(&Learner) -> Result<()>,
    ) -> Result<()> {
        while self.state.iteration < n_iterations && !self.state.pool.is_empty() {
            self.run_iteration(oracle)?;
            after(self)?;
        }
        Ok(())
    }
}
