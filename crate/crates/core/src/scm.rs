//! Structural causal models: per-node mechanisms, atomic interventions,
//! ancestral sampling and pointwise log-densities.
//!
//! Noise convention: every Gaussian noise term has variance `exp(log_var)`,
//! i.e. standard deviation `exp(log_var / 2)`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Dag;
use crate::numerics::{standard_normal, RngState};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// `x_j = sum_i G_ij w_ij x_i + noise`
    Linear,
    /// One-hidden-layer tanh network of the masked parents plus Gaussian noise.
    Mlp,
    /// Zero-inflated log-normal: point mass at zero, otherwise `log x_j` is
    /// Gaussian around the network output.
    Ziln,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// Parents are cut; the target is redrawn from its own distribution.
    Hard,
    /// The target's value is translated by `psi`.
    Shift,
}

/// Per-node conditional parameters.
///
/// `theta` layout: for `Linear` a `d x d` matrix with `theta[i * d + j]` the
/// weight of `i -> j`; otherwise one block per node holding the hidden layer
/// (`d x hidden`, input-major), its bias, the output weights, the output bias
/// and, for `Ziln`, the zero-inflation logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub d: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
    /// Per-node log noise variance.
    pub log_var: Vec<f64>,
}

/// Forward values of one node's conditional mean over a batch of rows.
pub(crate) struct NodeEval {
    pub means: Array1<f64>,
    hidden: Option<Array2<f64>>,
}

impl Mechanism {
    pub fn zeros(kind: MechanismKind, d: usize, hidden: usize) -> Self {
        let mut m = Self { kind, d, hidden, theta: Vec::new(), log_var: vec![0.0; d] };
        m.theta = vec![0.0; m.n_theta()];
        m
    }

    pub fn n_theta(&self) -> usize {
        match self.kind {
            MechanismKind::Linear => self.d * self.d,
            _ => self.d * self.block_len(),
        }
    }

    pub(crate) fn block_len(&self) -> usize {
        let h = self.hidden;
        let base = self.d * h + 2 * h + 1;
        match self.kind {
            MechanismKind::Linear => self.d,
            MechanismKind::Mlp => base,
            MechanismKind::Ziln => base + 1,
        }
    }

    fn block_offset(&self, j: usize) -> usize {
        j * self.block_len()
    }

    pub fn linear_weight(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.kind, MechanismKind::Linear);
        self.theta[i * self.d + j]
    }

    pub(crate) fn zero_logit_index(&self, j: usize) -> usize {
        self.block_offset(j) + self.block_len() - 1
    }

    /// Zero-inflation logit of node `j` (ZILN only).
    pub fn zero_logit(&self, j: usize) -> f64 {
        self.theta[self.zero_logit_index(j)]
    }

    fn validate(&self) -> Result<()> {
        if self.theta.len() != self.n_theta() || self.log_var.len() != self.d {
            return Err(Error::ShapeMismatch {
                expected: vec![self.n_theta(), self.d],
                got: vec![self.theta.len(), self.log_var.len()],
            });
        }
        if self.kind != MechanismKind::Linear && self.hidden == 0 {
            return Err(invalid("network mechanisms need hidden >= 1"));
        }
        if self.log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log noise variance".into()));
        }
        Ok(())
    }

    /// Conditional mean of node `j` given `x`, with parent weights `gcol[i]`
    /// multiplying input `i` (binary for a fixed graph, relaxed during training).
    pub fn mean_with(&self, gcol: &[f64], x: &[f64], j: usize) -> f64 {
        let d = self.d;
        match self.kind {
            MechanismKind::Linear => (0..d).map(|i| gcol[i] * self.theta[i * d + j] * x[i]).sum(),
            _ => {
                let h = self.hidden;
                let b = &self.theta[self.block_offset(j)..];
                let (w1, rest) = b.split_at(d * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, rest) = rest.split_at(h);
                let mut out = rest[0];
                for u in 0..h {
                    let mut a = b1[u];
                    for i in 0..d {
                        a += gcol[i] * x[i] * w1[i * h + u];
                    }
                    out += w2[u] * a.tanh();
                }
                out
            }
        }
    }

    pub(crate) fn node_forward(&self, j: usize, gcol: &[f64], x: ArrayView2<f64>) -> NodeEval {
        let d = self.d;
        match self.kind {
            MechanismKind::Linear => {
                let w: Vec<f64> = (0..d).map(|i| gcol[i] * self.theta[i * d + j]).collect();
                let means = x.dot(&Array1::from(w));
                NodeEval { means, hidden: None }
            }
            _ => {
                let h = self.hidden;
                let off = self.block_offset(j);
                let b = &self.theta[off..off + self.block_len()];
                let w1 = ArrayView2::from_shape((d, h), &b[..d * h]).unwrap();
                let masked = Array2::from_shape_fn((d, h), |(i, u)| gcol[i] * w1[[i, u]]);
                let mut act = x.dot(&masked);
                let b1 = &b[d * h..d * h + h];
                let w2 = Array1::from(b[d * h + h..d * h + 2 * h].to_vec());
                let b2 = b[d * h + 2 * h];
                for mut row in act.rows_mut() {
                    for (u, v) in row.iter_mut().enumerate() {
                        *v = (*v + b1[u]).tanh();
                    }
                }
                let means = act.dot(&w2) + b2;
                NodeEval { means, hidden: Some(act) }
            }
        }
    }

    /// Accumulate `d(sum_r dmean[r] * mean_j(x_r)) / d(theta, gcol)`.
    pub(crate) fn node_backward(
        &self,
        j: usize,
        gcol: &[f64],
        x: ArrayView2<f64>,
        eval: &NodeEval,
        dmean: &Array1<f64>,
        dtheta: &mut [f64],
        dgcol: &mut [f64],
    ) {
        let d = self.d;
        // xt_dmean[i] = sum_r dmean[r] x[r, i]
        match self.kind {
            MechanismKind::Linear => {
                let xt = x.t().dot(dmean);
                for i in 0..d {
                    dtheta[i * d + j] += gcol[i] * xt[i];
                    dgcol[i] += self.theta[i * d + j] * xt[i];
                }
            }
            _ => {
                let h = self.hidden;
                let off = self.block_offset(j);
                let b = &self.theta[off..off + self.block_len()];
                let w1 = ArrayView2::from_shape((d, h), &b[..d * h]).unwrap();
                let w2 = &b[d * h + h..d * h + 2 * h];
                let act = eval.hidden.as_ref().expect("network node keeps activations");
                // dA[r, u] = dmean[r] * w2[u] * (1 - act^2)
                let mut da = act.clone();
                for (r, mut row) in da.rows_mut().into_iter().enumerate() {
                    for (u, v) in row.iter_mut().enumerate() {
                        *v = dmean[r] * w2[u] * (1.0 - *v * *v);
                    }
                }
                // d w1 (masked input): U^T dA with U = x * gcol
                let xt_da = x.t().dot(&da); // d x h
                let g = &mut dtheta[off..off + self.block_len()];
                for i in 0..d {
                    for u in 0..h {
                        g[i * h + u] += gcol[i] * xt_da[[i, u]];
                        dgcol[i] += w1[[i, u]] * xt_da[[i, u]];
                    }
                }
                for u in 0..h {
                    g[d * h + u] += da.column(u).sum();
                    g[d * h + h + u] += act.column(u).dot(dmean);
                }
                g[d * h + 2 * h] += dmean.sum();
            }
        }
    }
}

/// An atomic intervention: which nodes are targeted and with what parameters.
///
/// Entries of `psi`, `log_var` and `zero_logit` on non-targeted nodes are
/// carried along but never read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub kind: InterventionKind,
    pub targets: Vec<bool>,
    /// Hard: interventional mean (log-space mean for ZILN). Shift: additive shift.
    pub psi: Vec<f64>,
    /// Hard only: interventional log-variance per node.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_var: Vec<f64>,
    /// Hard ZILN only: interventional zero-inflation logit per node.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_logit: Vec<f64>,
}

impl Intervention {
    pub fn observational(kind: InterventionKind, d: usize) -> Self {
        Self {
            kind,
            targets: vec![false; d],
            psi: vec![0.0; d],
            log_var: if kind == InterventionKind::Hard { vec![0.0; d] } else { Vec::new() },
            zero_logit: Vec::new(),
        }
    }

    pub fn hard(targets: Vec<bool>, psi: Vec<f64>, log_var: f64) -> Self {
        let d = targets.len();
        Self { kind: InterventionKind::Hard, targets, psi, log_var: vec![log_var; d], zero_logit: Vec::new() }
    }

    pub fn shift(targets: Vec<bool>, psi: Vec<f64>) -> Self {
        Self { kind: InterventionKind::Shift, targets, psi, log_var: Vec::new(), zero_logit: Vec::new() }
    }

    pub fn d(&self) -> usize {
        self.targets.len()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.d()).filter(|&i| self.targets[i]).collect()
    }

    pub fn is_observational(&self) -> bool {
        !self.targets.iter().any(|t| *t)
    }

    fn validate(&self, d: usize, mech: MechanismKind) -> Result<()> {
        let bad = |what: &str, len: usize| {
            Err(Error::ShapeMismatch { expected: vec![d], got: vec![len] })
                .map_err(|e: Error| Error::InvalidArgument(format!("intervention {what}: {e}")))
        };
        if self.targets.len() != d {
            return bad("targets", self.targets.len());
        }
        if self.psi.len() != d {
            return bad("psi", self.psi.len());
        }
        match (self.kind, mech) {
            (InterventionKind::Shift, MechanismKind::Ziln) => {
                return Err(Error::Unsupported("shift interventions on ZILN mechanisms".into()))
            }
            (InterventionKind::Hard, _) if self.log_var.len() != d => return bad("log_var", self.log_var.len()),
            (InterventionKind::Hard, MechanismKind::Ziln) if self.zero_logit.len() != d => {
                return bad("zero_logit", self.zero_logit.len())
            }
            _ => {}
        }
        Ok(())
    }
}

/// Ground-truth generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub hidden: usize,
    /// Observational noise variance of every node.
    pub noise_variance: f64,
    /// Zero-inflation probability (ZILN only).
    pub zero_prob: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self { hidden: 5, noise_variance: 0.1, zero_prob: 0.1 }
    }
}

/// A DAG together with its mechanisms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    pub dag: Dag,
    pub mechanism: Mechanism,
}

impl Scm {
    pub fn new(dag: Dag, mechanism: Mechanism) -> Result<Self> {
        mechanism.validate()?;
        if mechanism.d != dag.d() {
            return Err(Error::ShapeMismatch { expected: vec![dag.d()], got: vec![mechanism.d] });
        }
        Ok(Self { dag, mechanism })
    }

    /// Random mechanisms on `dag`: linear weights uniform on
    /// `[-3, -0.25] U [0.25, 3]`, network weights and biases standard normal.
    pub fn random(rng: &RngState, dag: Dag, kind: MechanismKind, cfg: &GroundTruthConfig) -> Result<Self> {
        let d = dag.d();
        let mut g = rng.generator();
        let mut mech = Mechanism::zeros(kind, d, cfg.hidden);
        match kind {
            MechanismKind::Linear => {
                for (i, j) in dag.edges() {
                    let mag = g.random_range(0.25..3.0);
                    let sign = if g.random::<bool>() { 1.0 } else { -1.0 };
                    mech.theta[i * d + j] = sign * mag;
                }
            }
            _ => {
                for v in mech.theta.iter_mut() {
                    *v = standard_normal(&mut g);
                }
                if kind == MechanismKind::Ziln {
                    let zl = (cfg.zero_prob / (1.0 - cfg.zero_prob)).ln();
                    for j in 0..d {
                        let idx = mech.zero_logit_index(j);
                        mech.theta[idx] = zl;
                    }
                }
            }
        }
        mech.log_var = vec![cfg.noise_variance.ln(); d];
        Scm::new(dag, mech)
    }

    pub fn d(&self) -> usize {
        self.dag.d()
    }

    /// Conditional mean of node `i` given `x` (log-space mean for ZILN).
    pub fn mech_mean(&self, x: &[f64], i: usize) -> f64 {
        let gcol: Vec<f64> = (0..self.d()).map(|p| if self.dag.has_edge(p, i) { 1.0 } else { 0.0 }).collect();
        self.mechanism.mean_with(&gcol, x, i)
    }

    fn check_intervention(&self, intervention: Option<&Intervention>) -> Result<()> {
        if let Some(iv) = intervention {
            iv.validate(self.d(), self.mechanism.kind)?;
        }
        Ok(())
    }

    /// Ancestral sampling of `n` rows, optionally under an intervention.
    ///
    /// Every row consumes the same draws (one normal per node, plus one uniform
    /// per node for ZILN) regardless of the intervention, so interventions that
    /// leave a node untouched leave its samples bit-identical for a fixed seed.
    pub fn sample(&self, intervention: Option<&Intervention>, n: usize, rng: &RngState) -> Result<Array2<f64>> {
        self.check_intervention(intervention)?;
        let d = self.d();
        let ziln = self.mechanism.kind == MechanismKind::Ziln;
        let mut g = rng.generator();
        let mut eps = Array2::zeros((n, d));
        let mut unif = Array2::zeros((n, if ziln { d } else { 0 }));
        for r in 0..n {
            for j in 0..d {
                eps[[r, j]] = standard_normal(&mut g);
                if ziln {
                    unif[[r, j]] = g.random::<f64>();
                }
            }
        }
        let mut x = Array2::zeros((n, d));
        let adj = self.dag.adjacency();
        for j in self.dag.topo_order() {
            let gcol: Vec<f64> = adj.column(j).to_vec();
            let targeted = intervention.is_some_and(|iv| iv.targets[j]);
            let iv = intervention.filter(|_| targeted);
            let means = match iv {
                Some(iv) if iv.kind == InterventionKind::Hard => Array1::from_elem(n, iv.psi[j]),
                _ => self.mechanism.node_forward(j, &gcol, x.view()).means,
            };
            let (log_var, zero_logit) = match iv {
                Some(iv) if iv.kind == InterventionKind::Hard => {
                    (iv.log_var[j], iv.zero_logit.get(j).copied().unwrap_or(0.0))
                }
                _ => (
                    self.mechanism.log_var[j],
                    if ziln { self.mechanism.zero_logit(j) } else { 0.0 },
                ),
            };
            let std = (0.5 * log_var).exp();
            let shift = match iv {
                Some(iv) if iv.kind == InterventionKind::Shift => iv.psi[j],
                _ => 0.0,
            };
            let p_zero = crate::numerics::sigmoid(zero_logit);
            for r in 0..n {
                let z = means[r] + std * eps[[r, j]];
                x[[r, j]] = if ziln {
                    if unif[[r, j]] < p_zero {
                        0.0
                    } else {
                        z.exp()
                    }
                } else {
                    z + shift
                };
            }
        }
        Ok(x)
    }

    /// `log p(x; M, I)`: sum over nodes of the active conditional's log-density.
    pub fn log_density(&self, intervention: Option<&Intervention>, x: &[f64]) -> Result<f64> {
        self.check_intervention(intervention)?;
        let d = self.d();
        if x.len() != d {
            return Err(Error::ShapeMismatch { expected: vec![d], got: vec![x.len()] });
        }
        let ziln = self.mechanism.kind == MechanismKind::Ziln;
        if ziln {
            if let Some(v) = x.iter().find(|v| **v < 0.0) {
                return Err(Error::Domain(format!("ZILN density needs x >= 0, got {v}")));
            }
        }
        let mut total = 0.0;
        for j in 0..d {
            let iv = intervention.filter(|iv| iv.targets[j]);
            total += match (iv, ziln) {
                (Some(iv), false) if iv.kind == InterventionKind::Hard => gauss_logpdf(x[j], iv.psi[j], iv.log_var[j]),
                (Some(iv), true) => ziln_logpdf(x[j], iv.zero_logit[j], iv.psi[j], iv.log_var[j]),
                (Some(iv), false) => gauss_logpdf(x[j] - iv.psi[j], self.mech_mean(x, j), self.mechanism.log_var[j]),
                (None, false) => gauss_logpdf(x[j], self.mech_mean(x, j), self.mechanism.log_var[j]),
                (None, true) => ziln_logpdf(
                    x[j],
                    self.mechanism.zero_logit(j),
                    self.mech_mean(x, j),
                    self.mechanism.log_var[j],
                ),
            };
        }
        Ok(total)
    }
}

pub(crate) fn gauss_logpdf(x: f64, mean: f64, log_var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + log_var) - 0.5 * r * r * (-log_var).exp()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mixed density: `log pi` at exactly zero, otherwise `log(1 - pi)` plus the
/// log-normal log-density with `log x ~ N(mean, exp(log_var))`.
pub(crate) fn ziln_logpdf(x: f64, zero_logit: f64, mean: f64, log_var: f64) -> f64 {
    if x == 0.0 {
        -softplus(-zero_logit)
    } else {
        let lx = x.ln();
        -softplus(zero_logit) + gauss_logpdf(lx, mean, log_var) - lx
    }
}
