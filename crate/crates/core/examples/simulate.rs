//! Runs a small simulated active-learning comparison on the synthetic corpus
//! and prints the seed-averaged learning curves.
//!
//! ```text
//! cargo run --release --example simulate -- [n_seeds] [n_iterations]
//! ```

use std::sync::Arc;
use std::time::Instant;

use seqal::active::{prepare_dataset, run_experiment, ExperimentConfig, PreparedCorpus};
use seqal::metrics::{comparison_table, learning_curve_report};

fn main() -> seqal::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("numeric argument"));
    let mut cfg = ExperimentConfig::default();
    cfg.n_seeds = args.next().unwrap_or(2);
    cfg.n_iterations = args.next().unwrap_or(cfg.n_iterations);

    let dataset = prepare_dataset(&cfg)?;
    let corpus = Arc::new(PreparedCorpus::new(dataset, &cfg.templates)?);
    println!(
        "{} sentences, {} features, {} labels",
        corpus.dataset.len(),
        corpus.index.len(),
        corpus.labels.len()
    );

    let mut reports = Vec::new();
    for &strategy in &cfg.strategies {
        let start = Instant::now();
        let log = run_experiment(&cfg, corpus.clone(), strategy)?;
        println!("{strategy}: {:.1}s", start.elapsed().as_secs_f64());
        reports.push(learning_curve_report(&log)?);
    }
    print!("{}", comparison_table(&reports));
    Ok(())
}
