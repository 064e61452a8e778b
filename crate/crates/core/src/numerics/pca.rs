use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Standardize-then-project encoder fit by eigendecomposition of the
/// covariance of the standardized columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub means: Vec<f64>,
    /// Column standard deviations; constant columns store 1.
    pub stds: Vec<f64>,
    /// `p x k` matrix whose columns are the retained components.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

pub fn pca_fit(x: ArrayView2<f64>, n_components: usize) -> Result<PcaModel> {
    let (n, p) = x.dim();
    if n < 2 {
        return Err(invalid(format!("pca needs at least 2 rows, got {n}")));
    }
    if n_components == 0 || n_components > n.min(p) {
        return Err(invalid(format!(
            "n_components must be in 1..={}, got {n_components}",
            n.min(p)
        )));
    }
    let means = x.mean_axis(Axis(0)).expect("n >= 2").to_vec();
    let stds: Vec<f64> = (0..p)
        .map(|j| {
            let col = x.column(j);
            let var = col.iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let s = var.sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    let z = standardize_with(x, &means, &stds);
    let cov = z.t().dot(&z) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(p, p, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Array2::zeros((p, n_components));
    let mut explained_variance = Vec::with_capacity(n_components);
    for (c, &idx) in order.iter().take(n_components).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // deterministic sign: largest-magnitude entry positive
        let pivot = (0..p)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("p > 0");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..p {
            components[[r, c]] = sign * v[r];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel { means, stds, components, explained_variance, explained_variance_ratio })
}

fn standardize_with(x: ArrayView2<f64>, means: &[f64], stds: &[f64]) -> Array2<f64> {
    let mut z = x.to_owned();
    for mut row in z.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - means[j]) / stds[j];
        }
    }
    z
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.means.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn standardize(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        Ok(standardize_with(x, &self.means, &self.stds))
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.standardize(x)?.dot(&self.components))
    }

    /// Map component scores back into standardized feature space.
    pub fn reconstruct_standardized(&self, scores: ArrayView2<f64>) -> Result<Array2<f64>> {
        if scores.ncols() != self.n_components() {
            return Err(Error::ShapeMismatch {
                expected: vec![scores.nrows(), self.n_components()],
                got: scores.shape().to_vec(),
            });
        }
        Ok(scores.dot(&self.components.t()))
    }

    fn check_width(&self, p: usize) -> Result<()> {
        if p != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: vec![self.input_dim()], got: vec![p] });
        }
        Ok(())
    }
}
