use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: each new centre is drawn with probability proportional
/// to its squared distance from the nearest existing centre.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(
    data: ArrayView2<f64>,
    k: usize,
    rng: &mut R,
) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut nearest: Vec<f64> = data
        .outer_iter()
        .map(|r| sq_dist(r, data.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, row) in data.outer_iter().enumerate() {
            let d = sq_dist(row, data.row(pick));
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    centroids
}

/// Assigns each row to its nearest centroid; returns total inertia.
pub fn assign(data: ArrayView2<f64>, centroids: ArrayView2<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, row) in data.outer_iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, centre) in centroids.outer_iter().enumerate() {
            let d = sq_dist(row, centre);
            if d < best.1 {
                best = (c, d);
            }
        }
        labels[i] = best.0;
        inertia += best.1;
    }
    inertia
}

/// Lloyd iterations from the given centres until the assignment stops changing.
///
/// An emptied cluster keeps its previous centre.
pub fn lloyd(data: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> KMeansFit {
    let n = data.nrows();
    let k = centroids.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut next = vec![0usize; n];
    let mut history = Vec::new();
    let mut inertia = assign(data, centroids.view(), &mut next);
    let mut iterations = 0;
    while iterations < max_iter {
        if next == labels {
            break;
        }
        labels.copy_from_slice(&next);
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &l) in data.outer_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &row);
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = &sums.row(c) / count as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        inertia = assign(data, centroids.view(), &mut next);
        history.push(inertia);
        iterations += 1;
    }
    KMeansFit {
        labels: next,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    }
}

/// k-means with k-means++ seeding, keeping the restart with the lowest inertia.
pub fn kmeans<R: Rng + ?Sized>(
    data: ArrayView2<f64>,
    k: usize,
    config: KMeansConfig,
    rng: &mut R,
) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    if data.nrows() < k {
        return Err(Error::config(
            "k",
            format!("{} samples cannot form {k} clusters", data.nrows()),
        ));
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..config.n_init.max(1) {
        let seeds = kmeans_plus_plus(data, k, rng);
        let fit = lloyd(data, seeds, config.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Column means, used as the k = 1 solution.
pub fn column_means(data: ArrayView2<f64>) -> Array1<f64> {
    data.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(data.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::adjusted_rand_index;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(
        rng: &mut ChaCha8Rng,
        centres: &[[f64; 2]],
        per: usize,
        std: f64,
    ) -> (Array2<f64>, Vec<usize>) {
        let noise = Normal::new(0.0, std).unwrap();
        let mut data = Array2::zeros((centres.len() * per, 2));
        let mut labels = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                data[[r, 0]] = centre[0] + noise.sample(rng);
                data[[r, 1]] = centre[1] + noise.sample(rng);
                labels.push(c);
            }
        }
        (data, labels)
    }

    #[test]
    fn k_one_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (data, _) = blobs(&mut rng, &[[0.0, 0.0], [4.0, 1.0]], 20, 1.0);
        let fit = kmeans(data.view(), 1, KMeansConfig::default(), &mut rng).unwrap();
        let mean = column_means(data.view());
        for j in 0..2 {
            assert!((fit.centroids[[0, j]] - mean[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (data, truth) = blobs(&mut rng, &[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 100, 1.0);
        let fit = kmeans(data.view(), 3, KMeansConfig::default(), &mut rng).unwrap();
        assert!(adjusted_rand_index(&fit.labels, &truth).unwrap() > 0.99);
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, _) = blobs(
            &mut rng,
            &[[0.0, 0.0], [2.0, 0.0], [1.0, 2.0], [3.0, 3.0]],
            50,
            1.5,
        );
        let seeds = kmeans_plus_plus(data.view(), 4, &mut rng);
        let fit = lloyd(data.view(), seeds, 300);
        for w in fit.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn k_equals_n_each_point_is_a_centre() {
        let data = ndarray::array![[0.0, 0.0], [1.0, 5.0], [3.0, -2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fit = kmeans(data.view(), 3, KMeansConfig::default(), &mut rng).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut l = fit.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn too_few_samples() {
        let data = ndarray::array![[0.0], [1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(kmeans(data.view(), 3, KMeansConfig::default(), &mut rng).is_err());
    }
}
