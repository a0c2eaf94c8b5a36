//! Runs both comparison methods on a synthetic cohort: PCA followed by
//! k-means, and k-means over the leaf risks of a survival forest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survclust::baselines::{PcaKMeans, RsfConfig, SurvivalForest};
use survclust::experiment::FeatureScaler;
use survclust::metrics::adjusted_rand_index;
use survclust::synthetic::{generate_dataset, SyntheticConfig};

fn main() -> survclust::Result<()> {
    let ds = generate_dataset(&SyntheticConfig::with_patients(1500, 5))?;
    let x = FeatureScaler::fit(ds.features.view())?.transform(ds.features.view());
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let forest = SurvivalForest::fit(x.view(), &ds.outcomes, RsfConfig::default(), &mut rng)?;
    for k in [3, 6] {
        let pca = PcaKMeans::fit(x.view(), 5, k, &mut rng)?;
        let rsf = forest.cluster(x.view(), k, &mut rng)?;
        for (name, labels) in [("pca_kmeans", &pca.labels), ("rsf", &rsf.labels)] {
            println!(
                "{name:<10} k={k}: ARI noise {:.3}, outcome {:.3}, combined {:.3}",
                adjusted_rand_index(labels, &ds.noise_labels)?,
                adjusted_rand_index(labels, &ds.outcome_labels)?,
                adjusted_rand_index(labels, &ds.combined_labels)?,
            );
        }
    }
    Ok(())
}
