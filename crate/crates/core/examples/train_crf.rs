//! Trains a CRF on part of the synthetic corpus and evaluates it on the rest.

use seqal::corpus::{generate_synthetic, split, SyntheticConfig};
use seqal::crf::{decode, label_list, train_with_report, CrfModel, TrainConfig};
use seqal::features::{build_feature_index, featurize_sentence, FeatureTemplate};
use seqal::metrics::{entity_f1, sentence_accuracy, token_f1};

fn main() -> seqal::Result<()> {
    let d = generate_synthetic(&SyntheticConfig::default(), 0)?;
    let parts = split(&d, 1, 300, 1000)?;

    // The index only sees training sentences here; unseen features are dropped at test time.
    let index = build_feature_index(&parts.labeled, &FeatureTemplate::ALL);
    let init = CrfModel::zeros(label_list(&d.schema), index.len(), 1.0)?.with_bio_constraints(true);
    let batch = parts
        .labeled
        .sentences
        .iter()
        .map(|s| Ok((featurize_sentence(s, &index)?, init.encode_tags(&s.tags)?)))
        .collect::<seqal::Result<Vec<_>>>()?;
    let (model, report) = train_with_report(&init, &batch, &TrainConfig::default())?;
    println!(
        "{} features, {} L-BFGS iterations, converged: {}",
        index.len(),
        report.iterations,
        report.converged
    );

    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for s in &parts.test.sentences {
        let dr = decode(&model, &featurize_sentence(s, &index)?)?;
        pred.push(model.decode_tags(&dr.path));
        gold.push(s.tags.clone());
    }
    println!("token F1     {:.4}", token_f1(&pred, &gold)?.f1);
    println!("entity F1    {:.4}", entity_f1(&pred, &gold)?.f1);
    println!("sentence acc {:.4}", sentence_accuracy(&pred, &gold)?);
    Ok(())
}
