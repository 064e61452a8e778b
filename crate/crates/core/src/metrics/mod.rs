//! Structural and distributional evaluation: edge and target F1, structural
//! intervention distance, entropic W2, mean distance, Pearson correlation of
//! means and KDE negative log-likelihood.

mod f1;
mod kde;
mod moments;
mod sid;
mod transport;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use f1::{edge_f1, f1_from_counts, target_f1};
pub use kde::{kde_nll, sample_covariance, Kde, KdeNll};
pub use moments::{mean_distance, pearson_means};
pub use sid::sid;
pub use transport::{sinkhorn_w2, sq_cost, Sinkhorn, SinkhornConfig};

/// Distributional metrics of one predicted environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub env: String,
    pub split: String,
    pub w2: f64,
    pub w2_raw: f64,
    pub w2_converged: bool,
    pub mean_distance: f64,
    pub pearson: f64,
    pub kde_nll: f64,
    pub kde_jittered: bool,
    /// Only when both predicted and true targets are known.
    pub target_f1: Option<f64>,
}

pub fn distribution_metrics(
    env: &str,
    split: &str,
    pred: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    sinkhorn: &SinkhornConfig,
) -> Result<EnvMetrics> {
    let w2 = sinkhorn_w2(pred, truth, sinkhorn)?;
    let kde = kde_nll(pred, truth)?;
    Ok(EnvMetrics {
        env: env.to_string(),
        split: split.to_string(),
        w2: w2.value,
        w2_raw: w2.raw,
        w2_converged: w2.converged,
        mean_distance: mean_distance(pred, truth)?,
        pearson: pearson_means(pred, truth)?,
        kde_nll: kde.nll,
        kde_jittered: kde.jittered,
        target_f1: None,
    })
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-split medians of every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub n_envs: usize,
    pub w2: Option<f64>,
    pub mean_distance: Option<f64>,
    pub pearson: Option<f64>,
    pub kde_nll: Option<f64>,
    pub target_f1: Option<f64>,
}

pub fn summarize(rows: &[EnvMetrics]) -> Vec<SplitSummary> {
    let mut splits: Vec<&str> = rows.iter().map(|r| r.split.as_str()).collect();
    splits.dedup();
    splits.sort();
    splits.dedup();
    splits
        .into_iter()
        .map(|s| {
            let rs: Vec<&EnvMetrics> = rows.iter().filter(|r| r.split == s).collect();
            SplitSummary {
                split: s.to_string(),
                n_envs: rs.len(),
                w2: median(rs.iter().map(|r| r.w2)),
                mean_distance: median(rs.iter().map(|r| r.mean_distance)),
                pearson: median(rs.iter().map(|r| r.pearson)),
                kde_nll: median(rs.iter().map(|r| r.kde_nll)),
                target_f1: median(rs.iter().filter_map(|r| r.target_f1)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median([f64::NAN]), None);
    }
}
