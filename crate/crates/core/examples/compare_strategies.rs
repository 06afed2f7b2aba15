//! Full desk-scale comparison of RAND, LC and LTP on the synthetic corpus,
//! with the per-seed numbers behind the headline curves: final sentence
//! accuracy per seed, sampling offsets, and how often each strategy
//! over-samples the rarest entity type.
//!
//! ```text
//! cargo run --release --example compare_strategies -- [n_seeds]
//! ```

use std::sync::Arc;

use seqal::active::{
    prepare_dataset, run_experiment, ExperimentConfig, ExperimentLog, PreparedCorpus,
};
use seqal::metrics::{comparison_table, learning_curve_report};

fn final_sentence_accuracy(log: &ExperimentLog) -> Vec<f64> {
    log.runs
        .iter()
        .map(|r| {
            r.history
                .last()
                .expect("baseline")
                .metrics
                .sentence_accuracy
        })
        .collect()
}

fn main() -> seqal::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.n_seeds = n.parse().expect("n_seeds");
    }
    let corpus = Arc::new(PreparedCorpus::new(prepare_dataset(&cfg)?, &cfg.templates)?);

    let logs = cfg
        .strategies
        .iter()
        .map(|&s| run_experiment(&cfg, corpus.clone(), s))
        .collect::<seqal::Result<Vec<_>>>()?;
    let reports = logs
        .iter()
        .map(learning_curve_report)
        .collect::<seqal::Result<Vec<_>>>()?;
    print!("{}", comparison_table(&reports));

    println!("\nfinal sentence accuracy per seed");
    for log in &logs {
        let accs: Vec<String> = final_sentence_accuracy(log)
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect();
        println!("{:<5} {}", log.strategy, accs.join(" "));
    }

    println!("\nmean offset over iterations 2..{}", cfg.n_iterations);
    for r in &reports {
        println!(
            "{:<5} {:.4}",
            r.strategy,
            r.mean_offset(2..=cfg.n_iterations).unwrap_or(f64::NAN)
        );
    }

    let rarest = logs[0].rarest_type().expect("non-empty schema").to_string();
    println!(
        "\nrarest type {rarest} (overall share {:.4}); seed-mean deviation per iteration",
        logs[0].overall_distribution.get(&rarest)
    );
    for r in &reports {
        let devs: Vec<String> = r
            .rows
            .iter()
            .skip(1)
            .map(|row| row.deviation[&rarest].map_or("-".into(), |d| format!("{d:+.4}")))
            .collect();
        println!("{:<5} {}", r.strategy, devs.join(" "));
    }
    Ok(())
}
