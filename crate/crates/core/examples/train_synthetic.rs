//! Pre-trains the autoencoder on reconstruction alone, then fine-tunes one
//! copy per weighting preset and reports agreement with each true partition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survclust::experiment::{FeatureScaler, REFERENCES};
use survclust::losses::{LossWeights, Scenario};
use survclust::metrics::adjusted_rand_index;
use survclust::network::{Cohort, Model, ModelConfig};
use survclust::synthetic::{generate_dataset, SyntheticConfig};
use survclust::trainer::{finetune_cluster, pretrain, TrainConfig};

fn main() -> survclust::Result<()> {
    let ds = generate_dataset(&SyntheticConfig::with_patients(1500, 3))?;
    let x = FeatureScaler::fit(ds.features.view())?.transform(ds.features.view());
    let cohort = Cohort::from_static(x.view());
    let layout = ds.layout();

    let mut train = TrainConfig {
        epochs: 20,
        batch_size: 128,
        learning_rate: 2e-3,
        weight_decay: 1e-6,
        seed: 1,
        weights: LossWeights::pretraining(1e-5),
        split_fraction: 1.0,
        n_repeats: 1,
        checkpoint_every: 0,
        checkpoint_dir: None,
    };
    let k = 6;
    let mut base = Model::new(
        ModelConfig::feedforward(&layout, 64, 10, k),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let history = pretrain(&mut base, &cohort, &train)?;
    let totals = history.totals();
    println!(
        "pretrain loss {:.4} -> {:.4}",
        totals[0],
        totals[totals.len() - 1]
    );

    let truths = [&ds.noise_labels, &ds.outcome_labels, &ds.combined_labels];
    train.learning_rate = 1e-3;
    for scenario in [
        Scenario::ReconOnly,
        Scenario::OutcomeOnly,
        Scenario::Combined,
    ] {
        let mut model = base.clone();
        model.init_centroids(
            &model.embed(&cohort, 1024)?,
            &mut ChaCha8Rng::seed_from_u64(2),
        )?;
        train.weights = scenario.weights().expect("preset");
        let fit = finetune_cluster(&mut model, &cohort, &ds.outcomes, &train)?;
        let aris: Vec<String> = REFERENCES
            .iter()
            .zip(truths)
            .map(|(name, truth)| {
                Ok(format!(
                    "{name} {:.3}",
                    adjusted_rand_index(&fit.labels, truth)?
                ))
            })
            .collect::<survclust::Result<_>>()?;
        println!("{:<13} k={k}: ARI {}", scenario.as_str(), aris.join(", "));
    }
    Ok(())
}
