//! Generates the imbalanced synthetic corpus (or loads a CoNLL file) and
//! prints its statistics and entity-type distribution.
//!
//! ```text
//! cargo run --example corpus_stats -- [path/to/file.conll]
//! ```

use seqal::corpus::{dataset_stats, generate_synthetic, Dataset, ParseOptions, SyntheticConfig};
use seqal::metrics::distribution_snapshot;

fn main() -> seqal::Result<()> {
    let d = match std::env::args().nth(1) {
        Some(path) => Dataset::load(path, ParseOptions::default())?,
        None => generate_synthetic(&SyntheticConfig::default(), 0)?,
    };
    let s = dataset_stats(&d)?;
    println!("{s:#?}");

    let dist = distribution_snapshot(&d.sentences, &d.schema);
    for etype in &d.schema {
        println!("{etype:<10} {:>6.2}%", 100.0 * dist.get(etype));
    }
    Ok(())
}
