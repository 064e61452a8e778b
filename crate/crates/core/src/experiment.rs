//! End-to-end experiment plumbing shared by the command-line tool and the
//! recovery tests: one configuration describing ground truth, data, model,
//! objective, optimizer and evaluation, and helpers running each stage from a
//! single seed.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{observational_predict, ShiftConfig, ShiftModel};
use crate::error::{invalid, Result};
use crate::gim::{Hyper, TrainData};
use crate::graph::{sample_er, sample_sf, Dag};
use crate::metrics::{distribution_metrics, target_f1, EnvMetrics, SinkhornConfig};
use crate::numerics::RngState;
use crate::perturbgen::{build_bundle, build_features, BundleConfig, DatasetBundle, Environment, Split};
use crate::predictor::Predictor;
use crate::scm::{GroundTruthConfig, Intervention, MechanismKind, Scm};
use crate::trainer::{holdout_data, init_params, train, ModelConfig, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Erdos-Renyi.
    Er,
    /// Scale-free (preferential attachment).
    Sf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: GraphKind,
    pub d: usize,
    /// Expected edge count of ER graphs.
    pub expected_edges: f64,
    /// Edges per new node of SF graphs.
    pub sf_m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmConfig {
    pub mechanism: MechanismKind,
    pub hidden: usize,
    pub noise_variance: f64,
    pub zero_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// Principal components kept in the perturbation features.
    pub n_components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub sinkhorn: SinkhornConfig,
    /// Samples drawn per predicted environment; `None` matches the size of
    /// the observed environment.
    pub n_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub graph: GraphConfig,
    pub scm: ScmConfig,
    pub data: BundleConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub hyper: Hyper,
    pub train: TrainConfig,
    pub baseline: ShiftConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    /// Synthetic setting with `d = 20`, ER graphs with `d` expected edges,
    /// linear-Gaussian mechanisms and 15 feature components.
    fn default() -> Self {
        Self {
            seed: 0,
            graph: GraphConfig { kind: GraphKind::Er, d: 20, expected_edges: 20.0, sf_m: 2 },
            scm: ScmConfig { mechanism: MechanismKind::Linear, hidden: 5, noise_variance: 0.1, zero_prob: 0.1 },
            data: BundleConfig::default(),
            features: FeatureConfig { n_components: 15 },
            model: ModelConfig::default(),
            hyper: Hyper::default(),
            train: TrainConfig::default(),
            baseline: ShiftConfig::default(),
            eval: EvalConfig { sinkhorn: SinkhornConfig::default(), n_samples: None },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.graph.d == 0 {
            return Err(invalid("graph.d must be >= 1"));
        }
        if self.model.mechanism != self.scm.mechanism {
            log::warn!("model mechanism {:?} differs from the ground truth {:?}", self.model.mechanism, self.scm.mechanism);
        }
        if self.model.intervention != self.data.kind {
            log::warn!("model intervention {:?} differs from the data {:?}", self.model.intervention, self.data.kind);
        }
        Ok(())
    }
}

/// Ground truth and data of one experiment.
#[derive(Clone, Debug)]
pub struct Generated {
    pub scm: Scm,
    pub bundle: DatasetBundle,
}

/// Sample the graph (`graph` substream), mechanisms (`params`), perturbations
/// and environments, then encode features.
pub fn generate(cfg: &ExperimentConfig) -> Result<Generated> {
    cfg.validate()?;
    let rng = RngState::new(cfg.seed);
    let g = &cfg.graph;
    let dag: Dag = match g.kind {
        GraphKind::Er => sample_er(&rng.named("graph"), g.d, g.expected_edges)?,
        GraphKind::Sf => sample_sf(&rng.named("graph"), g.d, g.sf_m)?,
    };
    let gt = GroundTruthConfig { hidden: cfg.scm.hidden, noise_variance: cfg.scm.noise_variance, zero_prob: cfg.scm.zero_prob };
    let scm = Scm::random(&rng.named("params"), dag, cfg.scm.mechanism, &gt)?;
    let mut bundle = build_bundle(&scm, &rng, &cfg.data)?;
    build_features(&mut bundle, cfg.features.n_components)?;
    Ok(Generated { scm, bundle })
}

/// Initialize from the `init` substream and train on the bundle's training
/// environments, holding out the last observational rows.
pub fn fit(bundle: &DatasetBundle, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let rng = RngState::new(cfg.seed);
    let (data, holdout) = TrainData::from_bundle(bundle, cfg.train.holdout_n)?;
    let holdout = holdout_data(&holdout, data.feature_dim)?;
    let (model, gim) = init_params(&rng.named("init"), bundle.d, data.feature_dim, &cfg.model)?;
    train(&data, &holdout, model, gim, &cfg.hyper, &cfg.train, &rng, None)
}

/// A method producing samples for a perturbation.
pub enum Method<'a> {
    Gim(&'a Predictor),
    Observational,
    Shift(&'a ShiftModel),
}

/// Samples predicted for one environment, with the inferred intervention
/// when the method infers one.
#[derive(Clone, Debug)]
pub struct EnvPrediction {
    pub env: String,
    pub split: Split,
    pub x: Array2<f64>,
    pub intervention: Option<Intervention>,
}

fn sample_count(env: &Environment, cfg: &EvalConfig) -> usize {
    cfg.n_samples.unwrap_or(env.x.nrows())
}

/// Predict every environment of `split`; environment `k` samples from
/// `rng.named("predict").substream(k)`.
pub fn predict_split(
    method: &Method,
    bundle: &DatasetBundle,
    split: Split,
    cfg: &EvalConfig,
    rng: &RngState,
) -> Result<Vec<EnvPrediction>> {
    let base = rng.named("predict");
    bundle
        .split(split)
        .par_iter()
        .enumerate()
        .map(|(k, env)| {
            let n = sample_count(env, cfg);
            let (x, intervention) = match method {
                Method::Gim(p) => {
                    let iv = p.infer_intervention(&env.gamma)?;
                    (p.scm.sample(Some(&iv), n, &base.substream(k as u64))?, Some(iv))
                }
                Method::Observational => (observational_predict(bundle, n)?, None),
                Method::Shift(m) => (m.predict(&env.gamma)?, None),
            };
            Ok(EnvPrediction { env: env.id.clone(), split, x, intervention })
        })
        .collect()
}

/// Distributional metrics of each prediction against its environment, plus
/// target F1 when an intervention was inferred.
pub fn evaluate_predictions(
    bundle: &DatasetBundle,
    preds: &[EnvPrediction],
    cfg: &EvalConfig,
) -> Result<Vec<EnvMetrics>> {
    preds
        .par_iter()
        .map(|p| {
            let env = bundle
                .environments()
                .find(|e| e.id == p.env)
                .ok_or_else(|| invalid(format!("unknown environment {}", p.env)))?;
            let mut m = distribution_metrics(&p.env, p.split.as_str(), p.x.view(), env.x.view(), &cfg.sinkhorn)?;
            if let Some(iv) = &p.intervention {
                m.target_f1 = Some(target_f1(&iv.targets, &env.intervention.targets)?);
            }
            Ok(m)
        })
        .collect()
}
