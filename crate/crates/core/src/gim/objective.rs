//! Monte-Carlo estimate of the log-joint and its gradients.
//!
//! For replicas `m = 1..M` a relaxed graph and one relaxed intervention per
//! interventional environment are drawn with frozen noise; the likelihood
//! term is `logsumexp_m(S_m) - log M` with `S_m` the summed log-likelihood of
//! all training environments. Priors are added in closed form or as MC means.

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{likelihood, LikGrad, Sampled};
use super::nobears::{nobears_from, DEFAULT_ITERS};
use super::{GimParams, LatentModel, McNoise};
use crate::error::{invalid, Error, Result};
use crate::numerics::{logsumexp, sigmoid, softmax, MlpCache, RngState};
use crate::perturbgen::DatasetBundle;
use crate::scm::LN_2PI;

/// One training environment as seen by the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvData {
    pub id: String,
    pub gamma: Vec<f64>,
    /// Observational environments always use `I = 0`.
    pub observational: bool,
    pub x: Array2<f64>,
}

pub(crate) struct SuffStats {
    pub n: f64,
    pub s: Array1<f64>,
    pub ss: Array2<f64>,
}

/// Training environments with precomputed stacked rows and sufficient statistics.
pub struct TrainData {
    pub d: usize,
    pub feature_dim: usize,
    pub envs: Vec<EnvData>,
    pub(crate) int_index: Vec<Option<usize>>,
    pub(crate) gammas: Array2<f64>,
    pub(crate) stacked: Array2<f64>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) stats: Vec<SuffStats>,
}

impl TrainData {
    pub fn new(envs: Vec<EnvData>) -> Result<Self> {
        let first = envs.first().ok_or_else(|| invalid("training data needs at least one environment"))?;
        let d = first.x.ncols();
        let feature_dim = first.gamma.len();
        for e in &envs {
            if e.x.ncols() != d {
                return Err(Error::ShapeMismatch { expected: vec![d], got: vec![e.x.ncols()] });
            }
            if !e.observational && e.gamma.len() != feature_dim {
                return Err(invalid(format!("environment '{}' has {} features, expected {feature_dim}", e.id, e.gamma.len())));
            }
        }
        let mut int_index = Vec::with_capacity(envs.len());
        let mut gamma_rows = Vec::new();
        for e in &envs {
            if e.observational {
                int_index.push(None);
            } else {
                int_index.push(Some(gamma_rows.len()));
                gamma_rows.push(e.gamma.clone());
            }
        }
        let gammas = Array2::from_shape_fn((gamma_rows.len(), feature_dim), |(r, c)| gamma_rows[r][c]);
        let mut offsets = vec![0];
        for e in &envs {
            offsets.push(offsets.last().unwrap() + e.x.nrows());
        }
        let views: Vec<_> = envs.iter().map(|e| e.x.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths checked above");
        let stats = envs
            .iter()
            .map(|e| SuffStats { n: e.x.nrows() as f64, s: e.x.sum_axis(ndarray::Axis(0)), ss: e.x.t().dot(&e.x) })
            .collect();
        Ok(Self { d, feature_dim, envs, int_index, gammas, stacked, offsets, stats })
    }

    /// Observational plus train environments of a bundle, with the last
    /// `holdout_n` observational rows split off and returned separately.
    pub fn from_bundle(bundle: &DatasetBundle, holdout_n: usize) -> Result<(Self, Array2<f64>)> {
        let obs = &bundle.observational;
        let n0 = obs.x.nrows();
        if holdout_n >= n0 {
            return Err(invalid(format!("holdout_n = {holdout_n} leaves no observational training rows (n_0 = {n0})")));
        }
        let keep = n0 - holdout_n;
        let mut envs = vec![EnvData {
            id: obs.id.clone(),
            gamma: obs.gamma.clone(),
            observational: true,
            x: obs.x.slice(s![..keep, ..]).to_owned(),
        }];
        for e in &bundle.train {
            envs.push(EnvData { id: e.id.clone(), gamma: e.gamma.clone(), observational: false, x: e.x.clone() });
        }
        Ok((Self::new(envs)?, obs.x.slice(s![keep.., ..]).to_owned()))
    }

    pub fn n_int(&self) -> usize {
        self.gammas.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.stacked.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Every gradient flows through the relaxed graph sample.
    Relaxed,
    /// Mechanism-parameter gradients use the thresholded graph sample (same
    /// noise, same interventions); all other blocks use the relaxed sample.
    Mixed,
}

/// Prior, relaxation and Monte-Carlo settings of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub beta_m: f64,
    pub beta_i: f64,
    /// Prior variance of `Z`; `None` means `1 / d`.
    pub eta_z2: Option<f64>,
    pub eta_theta2: f64,
    pub eta_sigma2: f64,
    pub eta_phi2: f64,
    pub tau: f64,
    pub mc_samples: usize,
    pub lambda: f64,
    pub mu: f64,
    pub nobears_iters: usize,
    pub estimator: Estimator,
    /// Use the sufficient-statistics likelihood for linear mechanisms.
    pub sufficient_stats: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            beta_m: 50.0,
            beta_i: 10.0,
            eta_z2: None,
            eta_theta2: 0.1,
            eta_sigma2: 4.0,
            eta_phi2: 0.1,
            tau: 1.0,
            mc_samples: 128,
            lambda: 0.0,
            mu: 1e-9,
            nobears_iters: DEFAULT_ITERS,
            estimator: Estimator::Mixed,
            sufficient_stats: true,
        }
    }
}

impl Hyper {
    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(invalid("mc_samples must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        let vars = [self.eta_theta2, self.eta_sigma2, self.eta_phi2, self.eta_z2.unwrap_or(1.0)];
        if vars.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("prior variances must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub z0: Array2<f64>,
    pub z1: Array2<f64>,
    pub theta: Vec<f64>,
    pub log_var: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        let sq = self.z0.iter().chain(self.z1.iter()).chain(&self.theta).chain(&self.log_var).chain(&self.phi);
        sq.map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.z0 *= c;
        self.z1 *= c;
        for v in self.theta.iter_mut().chain(&mut self.log_var).chain(&mut self.phi) {
            *v *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.norm().is_finite()
    }
}

/// Value, components and gradients of the log-joint.
#[derive(Clone, Debug)]
pub struct LogJoint {
    pub value: f64,
    /// `logsumexp_m(S_m) - log M`.
    pub log_likelihood: f64,
    /// Gaussian priors on `Z`, mechanisms, noise scales and network weights.
    pub gaussian_prior: f64,
    /// MC mean of mechanism sparsity and acyclicity penalties.
    pub graph_prior: f64,
    /// `-beta_I` times the expected number of targets over interventional environments.
    pub target_sparsity: f64,
    /// MC mean of the acyclicity score of the relaxed graph samples.
    pub expected_acyclicity: f64,
    pub grads: Gradients,
}

struct Context<'a> {
    model: &'a LatentModel,
    gim: &'a GimParams,
    data: &'a TrainData,
    hyper: &'a Hyper,
    rng: &'a RngState,
    logits: Array2<f64>,
    target_logits: Array2<f64>,
}

struct Replica {
    s: f64,
    graph_prior: f64,
    c: f64,
    d_logits_lik: Array2<f64>,
    d_logits_prior: Array2<f64>,
    d_theta: Vec<f64>,
    d_log_var: Vec<f64>,
    d_target_logits: Array2<f64>,
    d_heads: Vec<Vec<f64>>,
    /// Likelihood and mechanism gradient under the thresholded graph.
    hard: Option<(f64, Vec<f64>)>,
}

fn relaxed_graph(logits: &Array2<f64>, noise: &Array2<f64>, tau: f64) -> Array2<f64> {
    Array2::from_shape_fn(logits.dim(), |(i, j)| if i == j { 0.0 } else { sigmoid((logits[[i, j]] + noise[[i, j]]) / tau) })
}

fn hard_graph(logits: &Array2<f64>, noise: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(logits.dim(), |(i, j)| {
        if i != j && logits[[i, j]] + noise[[i, j]] > 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

impl Context<'_> {
    fn n_heads(&self) -> usize {
        self.gim.heads.len()
    }

    fn replica(&self, m: usize, want_grad: bool) -> Result<Replica> {
        let (d, h) = (self.data.d, self.hyper);
        let n_int = self.data.n_int();
        let noise = McNoise::draw(self.rng, m, d, n_int, self.n_heads());
        let g_soft = relaxed_graph(&self.logits, &noise.graph, h.tau);

        let nb = nobears_from(&g_soft, noise.u0.clone(), noise.v0.clone(), h.nobears_iters);
        let c = nb.value;
        let graph_prior = -h.beta_m * g_soft.sum() - (h.lambda * c + 0.5 * h.mu * c * c);

        let targets = Array2::from_shape_fn((n_int, d), |(k, j)| {
            sigmoid((self.target_logits[[k, j]] + noise.targets[[k, j]]) / h.tau)
        });
        let mut head_in = Array2::zeros((n_int, d + self.data.feature_dim));
        head_in.slice_mut(s![.., ..d]).assign(&targets);
        head_in.slice_mut(s![.., d..]).assign(&self.data.gammas);
        let mut caches: Vec<MlpCache> = Vec::with_capacity(self.n_heads());
        let mut params = Vec::with_capacity(self.n_heads());
        for (net, eps) in self.gim.heads.iter().zip(&noise.params) {
            let cache = net.forward_cached(head_in.view())?;
            params.push(cache.output() + &(eps * self.gim.eta_h));
            caches.push(cache);
        }
        let sampled = Sampled { targets: &targets, heads: &params };
        let mech = &self.model.mechanism;
        let kind = self.gim.kind;
        let (s_val, lik) =
            likelihood(mech, kind, &g_soft, self.data, &sampled, want_grad, h.sufficient_stats, m)?;
        let hard = if want_grad && h.estimator == Estimator::Mixed {
            let g_hard = hard_graph(&self.logits, &noise.graph);
            let (sh, lg) = likelihood(mech, kind, &g_hard, self.data, &sampled, true, h.sufficient_stats, m)?;
            Some((sh, lg.expect("gradient requested").theta))
        } else {
            None
        };

        let Some(LikGrad { graph: d_graph, theta, log_var, targets: mut d_targets, heads: d_params }) = lik else {
            return Ok(Replica {
                s: s_val,
                graph_prior,
                c,
                d_logits_lik: Array2::zeros((0, 0)),
                d_logits_prior: Array2::zeros((0, 0)),
                d_theta: Vec::new(),
                d_log_var: Vec::new(),
                d_target_logits: Array2::zeros((0, 0)),
                d_heads: Vec::new(),
                hard,
            });
        };
        let mut d_heads = Vec::with_capacity(self.n_heads());
        for ((net, cache), dp) in self.gim.heads.iter().zip(&caches).zip(&d_params) {
            let (pg, d_in) = net.backward(cache, dp.view());
            d_targets += &d_in.slice(s![.., ..d]);
            d_heads.push(pg);
        }
        let d_target_logits = Array2::from_shape_fn((n_int, d), |(k, j)| {
            let t = targets[[k, j]];
            d_targets[[k, j]] * t * (1.0 - t) / h.tau
        });
        let dc = nb.backward(&g_soft);
        let slope = |i: usize, j: usize| if i == j { 0.0 } else { g_soft[[i, j]] * (1.0 - g_soft[[i, j]]) / h.tau };
        let d_logits_lik = Array2::from_shape_fn((d, d), |(i, j)| d_graph[[i, j]] * slope(i, j));
        let coef = h.lambda + h.mu * c;
        let d_logits_prior = Array2::from_shape_fn((d, d), |(i, j)| (-h.beta_m - coef * dc[[i, j]]) * slope(i, j));
        Ok(Replica {
            s: s_val,
            graph_prior,
            c,
            d_logits_lik,
            d_logits_prior,
            d_theta: theta,
            d_log_var: log_var,
            d_target_logits,
            d_heads,
            hard,
        })
    }
}

fn gaussian_log_prior(values: impl Iterator<Item = f64>, var: f64) -> f64 {
    let (mut n, mut sq) = (0usize, 0.0);
    for v in values {
        n += 1;
        sq += v * v;
    }
    -0.5 * n as f64 * (LN_2PI + var.ln()) - 0.5 * sq / var
}

fn check_shapes(model: &LatentModel, gim: &GimParams, data: &TrainData) -> Result<()> {
    model.validate()?;
    if model.d() != data.d || gim.d() != data.d {
        return Err(Error::ShapeMismatch { expected: vec![data.d], got: vec![model.d(), gim.d()] });
    }
    if data.n_int() > 0 && gim.feature_dim() != data.feature_dim {
        return Err(Error::ShapeMismatch { expected: vec![data.feature_dim], got: vec![gim.feature_dim()] });
    }
    if gim.mechanism != model.mechanism.kind {
        return Err(invalid("intervention model and causal model disagree on the mechanism kind"));
    }
    Ok(())
}

fn context<'a>(
    model: &'a LatentModel,
    gim: &'a GimParams,
    data: &'a TrainData,
    hyper: &'a Hyper,
    rng: &'a RngState,
) -> Result<(Context<'a>, Option<MlpCache>)> {
    hyper.validate()?;
    check_shapes(model, gim, data)?;
    let (target_logits, cache) = if data.n_int() > 0 {
        let cache = gim.g_net.forward_cached(data.gammas.view())?;
        (cache.output().clone(), Some(cache))
    } else {
        (Array2::zeros((0, data.d)), None)
    };
    let ctx = Context { model, gim, data, hyper, rng, logits: model.edge_logits(), target_logits };
    Ok((ctx, cache))
}

/// The likelihood term alone: `logsumexp_m(S_m) - log M` under relaxed graph
/// and intervention samples drawn from `rng`.
pub fn mc_log_likelihood(
    model: &LatentModel,
    gim: &GimParams,
    data: &TrainData,
    hyper: &Hyper,
    rng: &RngState,
) -> Result<f64> {
    let (ctx, _) = context(model, gim, data, hyper, rng)?;
    let s: Vec<f64> = (0..hyper.mc_samples)
        .into_par_iter()
        .map(|m| ctx.replica(m, false).map(|r| r.s))
        .collect::<Result<_>>()?;
    Ok(logsumexp(&s) - (hyper.mc_samples as f64).ln())
}

/// Monte-Carlo log-joint with gradients for every parameter block.
///
/// The noise of replica `m` comes from `rng.substream(m)`, so the estimate is
/// a deterministic function of the parameters for a fixed `rng`, and parallel
/// evaluation reproduces the sequential result exactly.
pub fn log_joint(
    model: &LatentModel,
    gim: &GimParams,
    data: &TrainData,
    hyper: &Hyper,
    rng: &RngState,
) -> Result<LogJoint> {
    let (ctx, g_cache) = context(model, gim, data, hyper, rng)?;
    let big_m = hyper.mc_samples;
    let reps: Vec<Replica> = (0..big_m).into_par_iter().map(|m| ctx.replica(m, true)).collect::<Result<_>>()?;

    let d = data.d;
    let s: Vec<f64> = reps.iter().map(|r| r.s).collect();
    let log_likelihood = logsumexp(&s) - (big_m as f64).ln();
    let w = softmax(&s);
    let inv_m = 1.0 / big_m as f64;
    let graph_prior = reps.iter().map(|r| r.graph_prior).sum::<f64>() * inv_m;
    let expected_acyclicity = reps.iter().map(|r| r.c).sum::<f64>() * inv_m;

    let mech = &model.mechanism;
    let mut d_logits = Array2::<f64>::zeros((d, d));
    let mut d_theta = vec![0.0; mech.n_theta()];
    let mut d_log_var = vec![0.0; d];
    let mut d_tl = Array2::<f64>::zeros((data.n_int(), d));
    let mut d_heads: Vec<Vec<f64>> = gim.heads.iter().map(|h| vec![0.0; h.n_params()]).collect();
    for (r, &wm) in reps.iter().zip(&w) {
        d_logits.scaled_add(wm, &r.d_logits_lik);
        d_logits.scaled_add(inv_m, &r.d_logits_prior);
        for (a, b) in d_log_var.iter_mut().zip(&r.d_log_var) {
            *a += wm * b;
        }
        d_tl.scaled_add(wm, &r.d_target_logits);
        for (acc, g) in d_heads.iter_mut().zip(&r.d_heads) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += wm * b;
            }
        }
        if hyper.estimator == Estimator::Relaxed {
            for (a, b) in d_theta.iter_mut().zip(&r.d_theta) {
                *a += wm * b;
            }
        }
    }
    if hyper.estimator == Estimator::Mixed {
        let sh: Vec<f64> = reps.iter().map(|r| r.hard.as_ref().expect("mixed estimator").0).collect();
        for (r, wm) in reps.iter().zip(softmax(&sh)) {
            for (a, b) in d_theta.iter_mut().zip(&r.hard.as_ref().expect("mixed estimator").1) {
                *a += wm * b;
            }
        }
    }

    // closed-form expected target count
    let mut target_sparsity = 0.0;
    for ((k, j), &l) in ctx.target_logits.indexed_iter() {
        let p = sigmoid(l);
        target_sparsity -= hyper.beta_i * p;
        d_tl[[k, j]] -= hyper.beta_i * p * (1.0 - p);
    }

    let mut d_phi = match &g_cache {
        Some(cache) => gim.g_net.backward(cache, d_tl.view()).0,
        None => vec![0.0; gim.g_net.n_params()],
    };
    for h in d_heads {
        d_phi.extend(h);
    }

    let eta_z2 = hyper.eta_z2.unwrap_or(1.0 / d as f64);
    let phi = gim.params_flat();
    let gaussian_prior = gaussian_log_prior(model.z0.iter().chain(model.z1.iter()).copied(), eta_z2)
        + gaussian_log_prior(mech.theta.iter().copied(), hyper.eta_theta2)
        + gaussian_log_prior(mech.log_var.iter().copied(), hyper.eta_sigma2)
        + gaussian_log_prior(phi.iter().copied(), hyper.eta_phi2);
    for (g, v) in d_theta.iter_mut().zip(&mech.theta) {
        *g -= v / hyper.eta_theta2;
    }
    for (g, v) in d_log_var.iter_mut().zip(&mech.log_var) {
        *g -= v / hyper.eta_sigma2;
    }
    for (g, v) in d_phi.iter_mut().zip(&phi) {
        *g -= v / hyper.eta_phi2;
    }
    let alpha = model.alpha;
    let z0 = d_logits.dot(&model.z1) * alpha - &(&model.z0 / eta_z2);
    let z1 = d_logits.t().dot(&model.z0) * alpha - &(&model.z1 / eta_z2);

    Ok(LogJoint {
        value: gaussian_prior + graph_prior + target_sparsity + log_likelihood,
        log_likelihood,
        gaussian_prior,
        graph_prior,
        target_sparsity,
        expected_acyclicity,
        grads: Gradients { z0, z1, theta: d_theta, log_var: d_log_var, phi: d_phi },
    })
}
