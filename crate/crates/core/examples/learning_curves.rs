//! Runs one strategy, writes the per-seed CSV, then rebuilds the
//! seed-averaged learning curve from that file alone.

use std::sync::Arc;

use seqal::active::{prepare_dataset, run_experiment, ExperimentConfig, PreparedCorpus};
use seqal::metrics::{curve_from_rows, learning_curve_report, read_seed_csv};
use seqal::strategies::Strategy;

fn main() -> seqal::Result<()> {
    let cfg = ExperimentConfig {
        n_seeds: 3,
        n_iterations: 4,
        ..ExperimentConfig::default()
    };
    let corpus = Arc::new(PreparedCorpus::new(prepare_dataset(&cfg)?, &cfg.templates)?);
    let log = run_experiment(&cfg, corpus, Strategy::Ltp)?;

    let path = std::env::temp_dir().join("seqal-ltp.csv");
    std::fs::write(&path, log.to_csv())?;
    let (schema, rows) = read_seed_csv(std::fs::File::open(&path)?)?;
    let rebuilt = curve_from_rows("LTP", &schema, &rows)?;
    assert_eq!(rebuilt, learning_curve_report(&log)?);

    print!("{}", rebuilt.to_csv());
    println!("per-seed rows in {}", path.display());
    Ok(())
}
