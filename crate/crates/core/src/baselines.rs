//! Comparison predictors: the unperturbed distribution and an MLP regressing
//! mean shifts on perturbation features.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{AdamState, Mlp, RngState};
use crate::perturbgen::DatasetBundle;

/// The first `n` observational rows, cycling when `n` exceeds the pool.
pub fn observational_predict(bundle: &DatasetBundle, n: usize) -> Result<Array2<f64>> {
    let x = &bundle.observational.x;
    if x.nrows() == 0 {
        return Err(invalid("bundle has no observational rows"));
    }
    Ok(Array2::from_shape_fn((n, x.ncols()), |(r, j)| x[[r % x.nrows(), j]]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub steps: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { hidden: vec![100, 100], lr: 1e-3, steps: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftModel {
    pub mlp: Mlp,
    /// Observational rows the predicted shift is added to.
    pub base: Array2<f64>,
    /// Final training mean-squared error.
    pub train_mse: f64,
}

/// Full-batch Adam on the squared error between `mlp(gamma_k)` and
/// `mean(X_k) - mean(X_0)` over the training environments.
pub fn mlp_shift_fit(bundle: &DatasetBundle, cfg: &ShiftConfig, rng: &RngState) -> Result<ShiftModel> {
    let base = bundle.observational.x.clone();
    let mu0 = base.mean_axis(Axis(0)).ok_or_else(|| invalid("bundle has no observational rows"))?;
    if bundle.train.is_empty() {
        return Err(invalid("shift baseline needs at least one training environment"));
    }
    let p = bundle.feature_dim();
    let d = bundle.d;
    let k = bundle.train.len();
    let mut inputs = Array2::zeros((k, p));
    let mut targets = Array2::zeros((k, d));
    for (r, env) in bundle.train.iter().enumerate() {
        if env.gamma.len() != p {
            return Err(Error::ShapeMismatch { expected: vec![p], got: vec![env.gamma.len()] });
        }
        inputs.row_mut(r).assign(&Array1::from(env.gamma.clone()));
        let mk = env.x.mean_axis(Axis(0)).ok_or_else(|| invalid(format!("environment {} is empty", env.id)))?;
        targets.row_mut(r).assign(&(mk - &mu0));
    }
    let mut sizes = vec![p];
    sizes.extend(&cfg.hidden);
    sizes.push(d);
    let mut mlp = Mlp::glorot_normal(&sizes, &mut rng.generator());
    let mut adam = AdamState::new(mlp.n_params(), cfg.lr);
    let mut mse = f64::NAN;
    for _ in 0..cfg.steps {
        let cache = mlp.forward_cached(inputs.view())?;
        let resid = cache.output() - &targets;
        mse = resid.mapv(|v| v * v).mean().unwrap_or(0.0);
        let d_out = resid * (2.0 / (k * d) as f64);
        let (grads, _) = mlp.backward(&cache, d_out.view());
        adam.update(&mut mlp.params, &grads)?;
    }
    if cfg.steps > 0 {
        let out = mlp.forward(inputs.view())?;
        mse = (&out - &targets).mapv(|v| v * v).mean().unwrap_or(0.0);
    }
    Ok(ShiftModel { mlp, base, train_mse: mse })
}

impl ShiftModel {
    pub fn predict_shift(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward_one(gamma)
    }

    /// Observational rows translated by the predicted shift.
    pub fn predict(&self, gamma: &[f64]) -> Result<Array2<f64>> {
        let s = Array1::from(self.predict_shift(gamma)?);
        Ok(&self.base + &s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dag;
    use crate::perturbgen::{build_bundle, build_features, BundleConfig};
    use crate::scm::{GroundTruthConfig, MechanismKind, Scm};

    fn small_bundle(n_perturb: usize, dosages: Vec<f64>) -> DatasetBundle {
        let dag = Dag::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let scm = Scm::random(&RngState::new(1), dag, MechanismKind::Linear, &GroundTruthConfig::default()).unwrap();
        let cfg = BundleConfig {
            n_perturb,
            train_dosages: dosages,
            partial_dosages: vec![1.0],
            n_full_ood: 1,
            n_k: 30,
            n_0: 60,
            target_sizes: vec![1],
            ..BundleConfig::default()
        };
        let mut b = build_bundle(&scm, &RngState::new(2), &cfg).unwrap();
        build_features(&mut b, 2).unwrap();
        b
    }

    #[test]
    fn observational_rows_repeat_in_order() {
        let b = small_bundle(1, vec![1.0, 2.0]);
        let p = observational_predict(&b, 70).unwrap();
        assert_eq!(p.row(0), b.observational.x.row(0));
        assert_eq!(p.row(65), b.observational.x.row(5));
        let all = observational_predict(&b, 60).unwrap();
        assert_eq!(all, b.observational.x);
    }

    #[test]
    fn shift_prediction_is_a_translation() {
        let b = small_bundle(2, vec![1.0, 2.0]);
        let cfg = ShiftConfig { hidden: vec![8], steps: 50, lr: 1e-2 };
        let m = mlp_shift_fit(&b, &cfg, &RngState::new(3)).unwrap();
        let pred = m.predict(&b.partial_ood[0].gamma).unwrap();
        let diff = &pred - &b.observational.x;
        for r in diff.rows() {
            for (a, c) in r.iter().zip(diff.row(0).iter()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overfits_a_single_environment() {
        let mut b = small_bundle(1, vec![1.0, 2.0]);
        b.train.truncate(1);
        let cfg = ShiftConfig { hidden: vec![16], steps: 3000, lr: 1e-2 };
        let m = mlp_shift_fit(&b, &cfg, &RngState::new(4)).unwrap();
        assert!(m.train_mse < 1e-4, "{}", m.train_mse);
        let env = &b.train[0];
        let pred_mean = m.predict(&env.gamma).unwrap().mean_axis(Axis(0)).unwrap();
        let true_mean = env.x.mean_axis(Axis(0)).unwrap();
        for (a, c) in pred_mean.iter().zip(true_mean.iter()) {
            assert!((a - c).abs() < 1e-2);
        }
    }
}
