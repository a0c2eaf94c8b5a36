use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Principal axes fitted by eigendecomposition of the sample covariance.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// One unit-norm principal axis per row, by decreasing variance.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn fit(data: ArrayView2<f64>, n_components: usize) -> Result<Self> {
        let (n, d) = data.dim();
        if n_components == 0 || n_components > n.min(d) {
            return Err(Error::config(
                "n_components",
                format!("{n_components} not in 1..={}", n.min(d)),
            ));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let centered = &data - &mean;
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let cov = centered.t().dot(&centered) / denom;
        let cov = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = Array2::zeros((n_components, d));
        let mut explained_variance = Vec::with_capacity(n_components);
        for (c, &idx) in order.iter().take(n_components).enumerate() {
            let v = eig.eigenvectors.column(idx);
            // deterministic sign: largest-magnitude entry positive
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for j in 0..d {
                components[[c, j]] = sign * v[j];
            }
            explained_variance.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn transform(&self, data: ArrayView2<f64>) -> Array2<f64> {
        (&data - &self.mean).dot(&self.components.t())
    }

    pub fn inverse_transform(&self, projected: ArrayView2<f64>) -> Array2<f64> {
        projected.dot(&self.components) + &self.mean
    }
}

/// Fits the axes and projects `data` onto them.
pub fn pca(data: ArrayView2<f64>, n_components: usize) -> Result<(Pca, Array2<f64>)> {
    let model = Pca::fit(data, n_components)?;
    let projected = model.transform(data);
    Ok((model, projected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rank_one_line() {
        let data = array![
            [-2.0, -1.0],
            [-1.0, -0.5],
            [0.0, 0.0],
            [1.0, 0.5],
            [2.0, 1.0]
        ];
        let (model, _) = pca(data.view(), 2).unwrap();
        let dir = model.components.row(0);
        let norm = 5f64.sqrt();
        assert!((dir[0] - 2.0 / norm).abs() < 1e-12);
        assert!((dir[1] - 1.0 / norm).abs() < 1e-12);
        assert!(model.explained_variance[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_too_many_components() {
        let data = array![[1.0, 2.0], [3.0, 4.0]];
        assert!(pca(data.view(), 3).is_err());
        assert!(pca(data.view(), 0).is_err());
    }
}
