use std::sync::Arc;

use seqal::active::{ExperimentConfig, PreparedCorpus};
use seqal::corpus::SyntheticConfig;

/// A config small enough to run several times inside one test.
pub fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.synthetic = Some(SyntheticConfig {
        n_sentences: 240,
        ..SyntheticConfig::default()
    });
    cfg.batch_size = 10;
    cfg.n_iterations = 4;
    cfg.n_seeds = 2;
    cfg.initial_labeled = 10;
    cfg.test_size = 60;
    cfg.train.max_iterations = 40;
    cfg
}

pub fn corpus(cfg: &ExperimentConfig) -> Arc<PreparedCorpus> {
    let d = seqal::active::prepare_dataset(cfg).unwrap();
    Arc::new(PreparedCorpus::new(d, &cfg.templates).unwrap())
}
