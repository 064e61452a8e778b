//! Gaussian kernel density with Scott's-rule covariance.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};
use crate::numerics::logsumexp;
use crate::scm::LN_2PI;

#[derive(Clone, Debug)]
pub struct Kde {
    pub centers: Array2<f64>,
    /// Kernel covariance: sample covariance times `m^(-2 / (d + 4))`.
    pub bandwidth: Array2<f64>,
    /// Whether diagonal jitter was needed to factor the covariance.
    pub jittered: bool,
    chol: DMatrix<f64>,
    log_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeNll {
    pub nll: f64,
    pub jittered: bool,
}

/// Unbiased sample covariance of the rows.
pub fn sample_covariance(x: ArrayView2<f64>) -> Array2<f64> {
    let m = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("at least one row");
    let centered = &x - &mean;
    centered.t().dot(&centered) / (m as f64 - 1.0)
}

impl Kde {
    pub fn fit(pred: ArrayView2<f64>) -> Result<Self> {
        let (m, d) = pred.dim();
        if m < 2 {
            return Err(invalid(format!("KDE needs at least 2 samples, got {m}")));
        }
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KDE samples".into()));
        }
        let factor = (m as f64).powf(-2.0 / (d as f64 + 4.0));
        let mut h = sample_covariance(pred) * factor;
        let factor_of = |h: &Array2<f64>| DMatrix::from_fn(d, d, |i, j| h[[i, j]]).cholesky().map(|c| c.l());
        let mut jittered = false;
        let chol = match factor_of(&h) {
            Some(c) => c,
            None => {
                let tr = h.diag().sum() / d as f64;
                let jitter = 1e-6 * if tr > 0.0 { tr } else { 1.0 };
                for i in 0..d {
                    h[[i, i]] += jitter;
                }
                jittered = true;
                factor_of(&h).ok_or_else(|| Error::Domain("KDE covariance is not positive definite".into()))?
            }
        };
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * LN_2PI + log_det) - (m as f64).ln();
        Ok(Self { centers: pred.to_owned(), bandwidth: h, jittered, chol, log_norm })
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let d = self.centers.ncols();
        let mut terms = Vec::with_capacity(self.centers.nrows());
        for c in self.centers.rows() {
            let r = DVector::from_fn(d, |i, _| y[i] - c[i]);
            let s = self.chol.solve_lower_triangular(&r).expect("cholesky factor is invertible");
            terms.push(-0.5 * s.norm_squared());
        }
        logsumexp(&terms) + self.log_norm
    }
}

/// Mean negative log-density of `truth` rows under a KDE fit on `pred`.
pub fn kde_nll(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<KdeNll> {
    if pred.ncols() != truth.ncols() {
        return Err(Error::ShapeMismatch { expected: vec![pred.ncols()], got: vec![truth.ncols()] });
    }
    if truth.nrows() == 0 {
        return Err(invalid("KDE evaluation needs at least one row"));
    }
    let kde = Kde::fit(pred)?;
    let total: f64 = truth.rows().into_iter().map(|r| kde.log_density(r.as_slice().unwrap_or(&r.to_vec()))).sum();
    Ok(KdeNll { nll: -total / truth.nrows() as f64, jittered: kde.jittered })
}
