//! Comparison methods: PCA followed by k-means (unsupervised) and k-means
//! over per-tree survival risk scores (supervised).

mod kmeans;
mod pca;
mod survival_tree;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use kmeans::{assign, column_means, kmeans, kmeans_plus_plus, lloyd, KMeansConfig, KMeansFit};
pub use pca::{pca, Pca};
pub use survival_tree::{
    fit_survival_tree, mortality, nelson_aalen, SurvivalTree, TreeNode, MAX_THRESHOLDS,
};

use crate::error::{Error, Result};
use crate::SurvivalOutcome;

/// Reduces `data` to `n_components` principal components, then clusters them.
pub fn pca_kmeans<R: Rng + ?Sized>(
    data: ArrayView2<f64>,
    n_components: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(PcaKMeans::fit(data, n_components, k, rng)?.labels)
}

/// PCA projection and k-means centroids fitted on one cohort.
#[derive(Debug, Clone)]
pub struct PcaKMeans {
    pub pca: Pca,
    pub centroids: Array2<f64>,
    /// Labels of the fitting cohort.
    pub labels: Vec<usize>,
}

impl PcaKMeans {
    pub fn fit<R: Rng + ?Sized>(
        data: ArrayView2<f64>,
        n_components: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (pca, projected) = pca(data, n_components)?;
        let fit = kmeans(projected.view(), k, KMeansConfig::default(), rng)?;
        Ok(Self {
            pca,
            centroids: fit.centroids,
            labels: fit.labels,
        })
    }

    /// Nearest-centroid labels of new rows.
    pub fn predict(&self, data: ArrayView2<f64>) -> Vec<usize> {
        let projected = self.pca.transform(data);
        let mut labels = vec![0; data.nrows()];
        assign(projected.view(), self.centroids.view(), &mut labels);
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsfConfig {
    pub n_trees: usize,
    pub feature_fraction: f64,
    pub max_depth: usize,
}

impl Default for RsfConfig {
    fn default() -> Self {
        Self {
            n_trees: 10,
            feature_fraction: 0.75,
            max_depth: 4,
        }
    }
}

/// Survival trees grown on random feature subsets of one cohort.
#[derive(Debug, Clone)]
pub struct SurvivalForest {
    pub trees: Vec<SurvivalTree>,
}

impl SurvivalForest {
    pub fn fit<R: Rng + ?Sized>(
        features: ArrayView2<f64>,
        outcomes: &[SurvivalOutcome],
        config: RsfConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(config.feature_fraction > 0.0 && config.feature_fraction <= 1.0) {
            return Err(Error::config("feature_fraction", "must lie in (0, 1]"));
        }
        if config.n_trees == 0 {
            return Err(Error::config("n_trees", "must be at least 1"));
        }
        let d = features.ncols();
        let per_tree = ((d as f64 * config.feature_fraction).round() as usize).clamp(1, d);
        let mut trees = Vec::with_capacity(config.n_trees);
        for _ in 0..config.n_trees {
            let mut subset = index::sample(rng, d, per_tree).into_vec();
            subset.sort_unstable();
            trees.push(fit_survival_tree(
                features,
                outcomes,
                Some(&subset),
                config.max_depth,
            )?);
        }
        Ok(Self { trees })
    }

    /// One row per patient, one risk column per tree.
    pub fn risk_vectors(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut risks = Array2::zeros((features.nrows(), self.trees.len()));
        for (t, tree) in self.trees.iter().enumerate() {
            for (i, row) in features.outer_iter().enumerate() {
                risks[[i, t]] = tree.predict_row(row);
            }
        }
        risks
    }

    /// k-means over the risk vectors of `features`.
    pub fn cluster<R: Rng + ?Sized>(
        &self,
        features: ArrayView2<f64>,
        k: usize,
        rng: &mut R,
    ) -> Result<RsfClustering> {
        let risks = self.risk_vectors(features);
        let fit = kmeans(risks.view(), k, KMeansConfig::default(), rng)?;
        Ok(RsfClustering {
            labels: fit.labels,
            risks,
            forest: self.clone(),
            centroids: fit.centroids,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RsfClustering {
    pub labels: Vec<usize>,
    /// One row per patient, one column per tree.
    pub risks: Array2<f64>,
    pub forest: SurvivalForest,
    /// k-means centroids in risk space.
    pub centroids: Array2<f64>,
}

impl RsfClustering {
    /// Nearest-centroid labels of new rows.
    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<usize> {
        let risks = self.forest.risk_vectors(features);
        let mut labels = vec![0; features.nrows()];
        assign(risks.view(), self.centroids.view(), &mut labels);
        labels
    }
}

/// Fits `n_trees` survival trees on fresh random feature subsets and
/// clusters patients by their vector of leaf risks.
pub fn rsf_cluster<R: Rng + ?Sized>(
    features: ArrayView2<f64>,
    outcomes: &[SurvivalOutcome],
    k: usize,
    config: RsfConfig,
    rng: &mut R,
) -> Result<RsfClustering> {
    SurvivalForest::fit(features, outcomes, config, rng)?.cluster(features, k, rng)
}
