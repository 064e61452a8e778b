//! MAP optimization: Adam ascent on the Monte-Carlo log-joint, an augmented
//! Lagrangian schedule for the acyclicity penalty, cosine annealing of the
//! target-sparsity weight and holdout-based convergence checks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gim::nobears::nobears;
use crate::gim::{log_joint, mc_log_likelihood, EnvData, GimConfig, GimParams, Gradients, Hyper, LatentModel, TrainData};
use crate::numerics::{AdamState, RngState};
use crate::scm::{InterventionKind, MechanismKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `beta_max * (1 - cos(pi t / T)) / 2`: from 0 up to `beta_max`.
    CosineUp,
    /// `beta_max * (1 + cos(pi t / T)) / 2`: from `beta_max` down to 0.
    CosineDown,
    Constant,
}

impl BetaSchedule {
    pub fn value(self, beta_max: f64, step: usize, steps: usize) -> f64 {
        let frac = if steps == 0 { 1.0 } else { step as f64 / steps as f64 };
        let c = (std::f64::consts::PI * frac).cos();
        match self {
            BetaSchedule::CosineUp => beta_max * 0.5 * (1.0 - c),
            BetaSchedule::CosineDown => beta_max * 0.5 * (1.0 + c),
            BetaSchedule::Constant => beta_max,
        }
    }
}

/// Graph on which the Lagrangian update measures acyclicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcyclicityCheck {
    /// Thresholded MAP graph `1[Z0 Z1^T > 0]`.
    MapGraph,
    /// Edge-probability matrix `sigmoid(alpha Z0 Z1^T)`.
    Expected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub holdout_n: usize,
    pub check_every: usize,
    pub lambda0: f64,
    pub mu0: f64,
    /// Updates fire only while the measured acyclicity exceeds this value.
    pub acyclicity_tol: f64,
    pub acyclicity_check: AcyclicityCheck,
    pub beta_schedule: BetaSchedule,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Relative change of the smoothed holdout objective counted as converged.
    pub convergence_tol: f64,
    /// Number of checks averaged by the smoother.
    pub convergence_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 30_000,
            lr: 1e-3,
            holdout_n: 100,
            check_every: 100,
            lambda0: 0.0,
            mu0: 1e-9,
            acyclicity_tol: 1e-6,
            acyclicity_check: AcyclicityCheck::MapGraph,
            beta_schedule: BetaSchedule::CosineUp,
            grad_clip: 100.0,
            convergence_tol: 1e-3,
            convergence_window: 5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.check_every == 0 || self.convergence_window == 0 {
            return Err(invalid("check_every and convergence_window must be >= 1"));
        }
        if !(self.lr > 0.0) || !(self.mu0 > 0.0) {
            return Err(invalid("lr and mu0 must be positive"));
        }
        Ok(())
    }
}

/// Model sizes used to initialize a fresh run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mechanism: MechanismKind,
    pub intervention: InterventionKind,
    /// Latent rank; `None` means `d`.
    pub p_z: Option<usize>,
    pub alpha: f64,
    /// Hidden width of network mechanisms.
    pub hidden: usize,
    pub gim_hidden: Vec<usize>,
    pub eta_h: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mechanism: MechanismKind::Linear,
            intervention: InterventionKind::Hard,
            p_z: None,
            alpha: 1.0,
            hidden: 5,
            gim_hidden: vec![100, 100],
            eta_h: 0.1,
        }
    }
}

/// Fresh parameters: `Z ~ N(0, 1)`, mechanisms per [`LatentModel::init`],
/// Glorot-normal intervention networks.
pub fn init_params(rng: &RngState, d: usize, feature_dim: usize, cfg: &ModelConfig) -> Result<(LatentModel, GimParams)> {
    let model = LatentModel::init(&rng.named("model"), d, cfg.p_z.unwrap_or(d), cfg.mechanism, cfg.hidden, cfg.alpha)?;
    let gcfg = GimConfig { hidden: cfg.gim_hidden.clone(), eta_h: cfg.eta_h };
    let gim = GimParams::init(&rng.named("gim"), d, feature_dim, cfg.intervention, cfg.mechanism, &gcfg)?;
    Ok((model, gim))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub objective: f64,
    pub log_likelihood: f64,
    pub holdout: f64,
    /// Acyclicity of the graph selected by [`AcyclicityCheck`].
    pub acyclicity: f64,
    /// MC mean acyclicity of the relaxed samples at this step.
    pub expected_acyclicity: f64,
    pub lambda: f64,
    pub mu: f64,
    pub beta_i: f64,
    pub grad_norm: f64,
    /// Steps clipped since the previous record.
    pub clipped: usize,
    pub converged: bool,
    pub update_fired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianUpdate {
    pub step: usize,
    pub c: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub mu_before: f64,
    pub mu_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub updates: Vec<LagrangianUpdate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum TrainStatus {
    Completed,
    /// Stopped on a non-finite objective or gradient; parameters are the last
    /// finite ones.
    Aborted(String),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LatentModel,
    pub gim: GimParams,
    pub trace: TrainTrace,
    pub status: TrainStatus,
    pub steps_run: usize,
    pub lambda: f64,
    pub mu: f64,
}

/// Called after every check with the newest record and current parameters.
pub type Observer<'a> = dyn FnMut(&TraceRecord, &LatentModel, &GimParams) + 'a;

/// Likelihood term of the objective on held-out observational rows, with the
/// evaluation noise fixed by `rng` so checks are comparable.
pub fn holdout_objective(
    model: &LatentModel,
    gim: &GimParams,
    holdout: &TrainData,
    hyper: &Hyper,
    rng: &RngState,
) -> Result<f64> {
    mc_log_likelihood(model, gim, holdout, hyper, rng)
}

/// Holdout rows as a single observational environment.
pub fn holdout_data(holdout: &Array2<f64>, feature_dim: usize) -> Result<TrainData> {
    TrainData::new(vec![EnvData {
        id: "holdout".into(),
        gamma: vec![0.0; feature_dim],
        observational: true,
        x: holdout.clone(),
    }])
}

/// Acyclicity of the thresholded graph `1[logits > 0]`.
pub fn map_acyclicity(model: &LatentModel, rng: &RngState, iters: usize) -> f64 {
    let g = model.edge_logits().mapv(|l| if l > 0.0 { 1.0 } else { 0.0 });
    nobears(&g, rng, iters)
}

fn expected_acyclicity(model: &LatentModel, rng: &RngState, iters: usize) -> f64 {
    let g = model.edge_logits().mapv(crate::numerics::sigmoid);
    nobears(&g, rng, iters)
}

struct Optimizers {
    z: AdamState,
    theta: AdamState,
    log_var: AdamState,
    phi: AdamState,
}

fn ascend(opt: &mut Optimizers, model: &mut LatentModel, gim: &mut GimParams, g: &Gradients) -> Result<()> {
    let neg = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| -x).collect::<Vec<f64>>();
    let mut z: Vec<f64> = model.z0.iter().chain(model.z1.iter()).copied().collect();
    opt.z.update(&mut z, &neg(&mut g.z0.iter().chain(g.z1.iter())))?;
    let n = model.z0.len();
    for (dst, src) in model.z0.iter_mut().chain(model.z1.iter_mut()).zip(&z) {
        *dst = *src;
    }
    debug_assert_eq!(z.len(), 2 * n);
    opt.theta.update(&mut model.mechanism.theta, &neg(&mut g.theta.iter()))?;
    opt.log_var.update(&mut model.mechanism.log_var, &neg(&mut g.log_var.iter()))?;
    let mut phi = gim.params_flat();
    opt.phi.update(&mut phi, &neg(&mut g.phi.iter()))?;
    gim.set_params_flat(&phi)
}

/// Maximize the log-joint from the given initial parameters.
///
/// `hyper.beta_i` is the maximum of the target-sparsity schedule; `hyper.lambda`
/// and `hyper.mu` are overridden by the Lagrangian state.
#[allow(clippy::too_many_arguments)]
pub fn train(
    data: &TrainData,
    holdout: &TrainData,
    model: LatentModel,
    gim: GimParams,
    hyper: &Hyper,
    cfg: &TrainConfig,
    rng: &RngState,
    mut observer: Option<&mut Observer>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (mut model, mut gim) = (model, gim);
    let mut opt = Optimizers {
        z: AdamState::new(2 * model.z0.len(), cfg.lr),
        theta: AdamState::new(model.mechanism.theta.len(), cfg.lr),
        log_var: AdamState::new(model.d(), cfg.lr),
        phi: AdamState::new(gim.n_params(), cfg.lr),
    };
    let train_rng = rng.named("train");
    let eval_rng = rng.named("eval");
    let nobears_rng = rng.named("acyclicity");
    let (mut lambda, mut mu) = (cfg.lambda0, cfg.mu0);
    let mut trace = TrainTrace::default();
    let mut window: Vec<f64> = Vec::new();
    let mut clipped = 0usize;
    let mut status = TrainStatus::Completed;
    let mut steps_run = 0;

    for step in 0..cfg.steps {
        let mut h = hyper.clone();
        h.beta_i = cfg.beta_schedule.value(hyper.beta_i, step, cfg.steps);
        h.lambda = lambda;
        h.mu = mu;
        let lj = match log_joint(&model, &gim, data, &h, &train_rng.substream(step as u64)) {
            Ok(lj) => lj,
            Err(Error::NonFinite(msg)) => {
                status = TrainStatus::Aborted(format!("step {step}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mut grads = lj.grads;
        let grad_norm = grads.norm();
        if !lj.value.is_finite() || !grad_norm.is_finite() {
            status = TrainStatus::Aborted(format!("step {step}: non-finite objective or gradient"));
            break;
        }
        if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip {
            grads.scale(cfg.grad_clip / grad_norm);
            clipped += 1;
        }
        let (prev_model, prev_gim) = (model.clone(), gim.clone());
        ascend(&mut opt, &mut model, &mut gim, &grads)?;
        if model.z0.iter().chain(model.mechanism.theta.iter()).any(|v| !v.is_finite()) {
            model = prev_model;
            gim = prev_gim;
            status = TrainStatus::Aborted(format!("step {step}: parameters became non-finite"));
            break;
        }
        steps_run = step + 1;

        if steps_run % cfg.check_every != 0 {
            continue;
        }
        let holdout_value = holdout_objective(&model, &gim, holdout, &h, &eval_rng)?;
        window.push(holdout_value);
        let converged = converged(&window, cfg);
        let acyclicity = match cfg.acyclicity_check {
            AcyclicityCheck::MapGraph => map_acyclicity(&model, &nobears_rng, h.nobears_iters),
            AcyclicityCheck::Expected => expected_acyclicity(&model, &nobears_rng, h.nobears_iters),
        };
        let mut update_fired = false;
        if converged && acyclicity > cfg.acyclicity_tol {
            let (lb, mb) = (lambda, mu);
            lambda += mu * acyclicity;
            mu *= 2.0;
            trace.updates.push(LagrangianUpdate {
                step: steps_run,
                c: acyclicity,
                lambda_before: lb,
                lambda_after: lambda,
                mu_before: mb,
                mu_after: mu,
            });
            log::debug!("step {steps_run}: lagrangian update c = {acyclicity:.3e}, lambda = {lambda:.3e}, mu = {mu:.3e}");
            window.clear();
            update_fired = true;
        }
        let record = TraceRecord {
            step: steps_run,
            objective: lj.value,
            log_likelihood: lj.log_likelihood,
            holdout: holdout_value,
            acyclicity,
            expected_acyclicity: lj.expected_acyclicity,
            lambda,
            mu,
            beta_i: h.beta_i,
            grad_norm,
            clipped,
            converged,
            update_fired,
        };
        log::info!(
            "step {:>6}  objective {:>12.4}  holdout {:>10.4}  c {:.2e}  clipped {}",
            record.step,
            record.objective,
            record.holdout,
            record.acyclicity,
            record.clipped
        );
        clipped = 0;
        if let Some(obs) = observer.as_deref_mut() {
            obs(&record, &model, &gim);
        }
        trace.records.push(record);
    }
    Ok(TrainOutcome { model, gim, trace, status, steps_run, lambda, mu })
}

/// Relative change between the means of the last `w` checks and the `w`
/// checks before the newest one.
fn converged(window: &[f64], cfg: &TrainConfig) -> bool {
    let w = cfg.convergence_window;
    if window.len() < w + 1 {
        return false;
    }
    let n = window.len();
    let cur = window[n - w..].iter().sum::<f64>() / w as f64;
    let prev = window[n - w - 1..n - 1].iter().sum::<f64>() / w as f64;
    (cur - prev).abs() <= cfg.convergence_tol * prev.abs().max(1e-12)
}
