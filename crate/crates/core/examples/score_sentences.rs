//! Scores a handful of decoded sentences under every uncertainty strategy.
//! LC climbs toward 1 as sentences grow; geometric-mean NLC stays roughly flat.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqal::crf::{DecodeResult, Lattice};
use seqal::strategies::{score_lc, score_ltp, score_mtp, score_nlc, HMode, NlcMode};

fn main() -> seqal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = 5;
    println!(
        "{:>3} {:>7} {:>7} {:>7} {:>7}",
        "n", "LC", "NLC", "MTP", "LTP"
    );
    for n in [1, 2, 4, 8, 16, 32] {
        let emissions = Array2::from_shape_fn((n, l), |(_, j)| {
            if j == 0 {
                2.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let lattice = Lattice::new(emissions, Array2::zeros((l, l)))?;
        let dr = DecodeResult::from_lattice(&lattice);
        println!(
            "{n:>3} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            score_lc(&dr),
            score_nlc(&dr, n, NlcMode::GeometricMean),
            score_mtp(&dr, HMode::PosteriorMarginal),
            score_ltp(&dr, HMode::PosteriorMarginal),
        );
    }
    Ok(())
}
