//! Multi-seed simulated experiments with the gold oracle.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GoldOracle, Learner, LoopConfig, PreparedCorpus, Snapshot};
use crate::corpus::{generate_synthetic, split, Dataset, ParseOptions, SyntheticConfig};
use crate::crf::TrainConfig;
use crate::error::{Error, Result};
use crate::features::FeatureTemplate;
use crate::metrics::{distribution_snapshot, DistributionSnapshot};
use crate::strategies::{HMode, NlcMode, Strategy, StrategyConfig};

use super::IterationRecord;

/// Where the sentences come from: a CoNLL file or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub synthetic_seed: u64,
    /// Turn orphan `I-X` tags into `B-X` while loading a file.
    #[serde(default)]
    pub repair: bool,
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: Some(SyntheticConfig::default()),
            synthetic_seed: 0,
            repair: false,
        }
    }
}

/// Experiment recipe, loadable from TOML. Missing keys take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub strategies: Vec<Strategy>,
    pub h_mode: HMode,
    pub nlc_mode: NlcMode,
    pub batch_size: usize,
    pub n_iterations: usize,
    pub n_seeds: usize,
    pub initial_labeled: usize,
    pub test_size: usize,
    /// Base seed; run `s` uses `seed + s` for its split and its RAND draws.
    pub seed: u64,
    pub l2_sigma: f64,
    pub constrain_bio: bool,
    pub warm_start: bool,
    pub templates: Vec<FeatureTemplate>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    /// Desk scale: B=20, 8 iterations, 10 seeds on the synthetic corpus.
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            strategies: vec![Strategy::Rand, Strategy::Lc, Strategy::Ltp],
            h_mode: HMode::default(),
            nlc_mode: NlcMode::default(),
            batch_size: 20,
            n_iterations: 8,
            n_seeds: 10,
            initial_labeled: 20,
            test_size: 500,
            seed: 0,
            l2_sigma: 1.0,
            constrain_bio: true,
            warm_start: false,
            templates: FeatureTemplate::ALL.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Large-scale settings: B=200, 12 iterations, 10 seeds, about 100 seed sentences.
    pub fn full_scale() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            batch_size: 200,
            n_iterations: 12,
            n_seeds: 10,
            initial_labeled: 99,
            test_size: 2000,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; a relative dataset path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.dataset.path, path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => {
                return fail("dataset: give either `path` or `synthetic`, not both")
            }
            (None, None) => return fail("dataset: one of `path` or `synthetic` is required"),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        if self.strategies.is_empty() {
            return fail("strategies must not be empty");
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return fail("strategies must not repeat");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.n_seeds == 0 {
            return fail("n_seeds must be at least 1");
        }
        if self.initial_labeled == 0 {
            return fail("initial_labeled must be at least 1");
        }
        if self.test_size == 0 {
            return fail("test_size must be at least 1");
        }
        if !(self.l2_sigma > 0.0 && self.l2_sigma.is_finite()) {
            return fail("l2_sigma must be positive");
        }
        if self.templates.is_empty() {
            return fail("templates must not be empty");
        }
        Ok(())
    }

    /// Rejects datasets too small for the seed set, the test split and a non-empty pool.
    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        let needed = self.initial_labeled + self.test_size + 1;
        if d.len() < needed {
            return Err(Error::Config(format!(
                "dataset has {} sentences; this config needs at least {needed}",
                d.len()
            )));
        }
        Ok(())
    }

    pub fn strategy_config(&self, strategy: Strategy, seed_index: usize) -> StrategyConfig {
        StrategyConfig {
            strategy,
            h_mode: self.h_mode,
            nlc_mode: self.nlc_mode,
            seed: self.run_seed(seed_index),
        }
    }

    pub fn loop_config(&self, strategy: Strategy, seed_index: usize) -> LoopConfig {
        LoopConfig {
            strategy: self.strategy_config(strategy, seed_index),
            batch_size: self.batch_size,
            l2_sigma: self.l2_sigma,
            constrain_bio: self.constrain_bio,
            warm_start: self.warm_start,
            train: self.train.clone(),
        }
    }

    pub fn run_seed(&self, seed_index: usize) -> u64 {
        self.seed.wrapping_add(seed_index as u64)
    }

    /// Seed-set / pool / test partition for run `seed_index`, identical for every strategy.
    pub fn partition(&self, d: &Dataset, seed_index: usize) -> Result<[BTreeSet<usize>; 3]> {
        self.check_dataset(d)?;
        let s = split(
            d,
            self.run_seed(seed_index),
            self.initial_labeled,
            self.test_size,
        )?;
        Ok([
            s.labeled.ids().into_iter().collect(),
            s.pool.ids().into_iter().collect(),
            s.test.ids().into_iter().collect(),
        ])
    }

    /// A learner for run `seed_index`, with its baseline already trained.
    pub fn learner(
        &self,
        corpus: Arc<PreparedCorpus>,
        strategy: Strategy,
        seed_index: usize,
    ) -> Result<Learner> {
        let [labeled, pool, test] = self.partition(&corpus.dataset, seed_index)?;
        Learner::new(
            corpus,
            labeled,
            pool,
            test,
            self.loop_config(strategy, seed_index),
        )
    }
}

/// Loads or generates the configured dataset.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let d = match (&cfg.dataset.path, &cfg.dataset.synthetic) {
        (Some(path), _) => Dataset::load(
            path,
            ParseOptions {
                repair: cfg.dataset.repair,
            },
        )?,
        (None, Some(s)) => generate_synthetic(s, cfg.dataset.synthetic_seed)?,
        (None, None) => unreachable!("validated"),
    };
    cfg.check_dataset(&d)?;
    Ok(d)
}

/// One seed's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed_index: usize,
    pub seed: u64,
    pub history: Vec<IterationRecord>,
}

/// All runs of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub strategy: Strategy,
    pub h_mode: HMode,
    pub nlc_mode: NlcMode,
    pub batch_size: usize,
    pub n_iterations: usize,
    pub initial_labeled: usize,
    pub test_size: usize,
    pub seed: u64,
    pub schema: Vec<String>,
    /// Entity-type proportions over the whole dataset.
    pub overall_distribution: DistributionSnapshot,
    pub runs: Vec<SeedRun>,
}

impl ExperimentLog {
    pub fn new(
        cfg: &ExperimentConfig,
        strategy: Strategy,
        dataset: &Dataset,
        runs: Vec<SeedRun>,
    ) -> Self {
        Self {
            strategy,
            h_mode: cfg.h_mode,
            nlc_mode: cfg.nlc_mode,
            batch_size: cfg.batch_size,
            n_iterations: cfg.n_iterations,
            initial_labeled: cfg.initial_labeled,
            test_size: cfg.test_size,
            seed: cfg.seed,
            schema: dataset.schema.clone(),
            overall_distribution: distribution_snapshot(&dataset.sentences, &dataset.schema),
            runs,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("log serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Entity type with the smallest overall share (first in schema order on ties).
    pub fn rarest_type(&self) -> Option<&str> {
        self.schema
            .iter()
            .min_by(|a, b| {
                self.overall_distribution
                    .get(a)
                    .total_cmp(&self.overall_distribution.get(b))
            })
            .map(String::as_str)
    }
}

fn snapshot_path(dir: &Path, strategy: Strategy, seed_index: usize) -> PathBuf {
    dir.join(format!("{}-seed{seed_index}.json", strategy.as_str()))
}

/// Runs every seed of one strategy with the gold oracle.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    corpus: Arc<PreparedCorpus>,
    strategy: Strategy,
) -> Result<ExperimentLog> {
    run_experiment_resumable(cfg, corpus, strategy, None)
}

/// Like [`run_experiment`], but when `checkpoints` is given a snapshot per
/// seed is written there after every iteration, and existing snapshots are
/// resumed instead of starting over.
pub fn run_experiment_resumable(
    cfg: &ExperimentConfig,
    corpus: Arc<PreparedCorpus>,
    strategy: Strategy,
    checkpoints: Option<&Path>,
) -> Result<ExperimentLog> {
    cfg.validate()?;
    cfg.check_dataset(&corpus.dataset)?;
    let mut runs = Vec::with_capacity(cfg.n_seeds);
    for s in 0..cfg.n_seeds {
        let snap_path = checkpoints.map(|dir| snapshot_path(dir, strategy, s));
        let mut learner = match &snap_path {
            Some(p) if p.exists() => {
                let snap = Snapshot::load(p)?;
                if snap.config != cfg.loop_config(strategy, s) {
                    return Err(Error::Config(format!(
                        "checkpoint {} was written with a different configuration",
                        p.display()
                    )));
                }
                Learner::resume(corpus.clone(), snap)?
            }
            _ => {
                let l = cfg.learner(corpus.clone(), strategy, s)?;
                if let Some(p) = &snap_path {
                    l.snapshot().save(p)?;
                }
                l
            }
        };
        let mut oracle = GoldOracle::new(&corpus.dataset);
        learner.run(cfg.n_iterations, &mut oracle, |l| match &snap_path {
            Some(p) => l.snapshot().save(p),
            None => Ok(()),
        })?;
        runs.push(SeedRun {
            seed_index: s,
            seed: cfg.run_seed(s),
            history: learner.history().to_vec(),
        });
    }
    Ok(ExperimentLog::new(cfg, strategy, &corpus.dataset, runs))
}
