//! The learnable model: a latent continuous graph with mechanism parameters,
//! the intervention networks mapping perturbation features to targets and
//! parameters, and the Monte-Carlo log-joint with analytic gradients.

mod likelihood;
pub mod nobears;
mod objective;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{gumbel_sigmoid_with_noise, logistic_noise, sigmoid, standard_normal, Mlp, RngState};
use crate::scm::{Intervention, InterventionKind, Mechanism, MechanismKind};

pub use objective::{log_joint, mc_log_likelihood, EnvData, Estimator, Gradients, Hyper, LogJoint, TrainData};

/// Continuous causal-model state: latent graph factors plus mechanisms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    /// `d x p_z` source factors.
    pub z0: Array2<f64>,
    /// `d x p_z` target factors.
    pub z1: Array2<f64>,
    /// Inverse temperature of the edge logits.
    pub alpha: f64,
    pub mechanism: Mechanism,
}

impl LatentModel {
    /// `Z ~ N(0, 1)`; linear weights `~ N(0, 0.1)`, network weights Glorot
    /// normal with zero biases; log-variances zero.
    pub fn init(rng: &RngState, d: usize, p_z: usize, kind: MechanismKind, hidden: usize, alpha: f64) -> Result<Self> {
        if p_z == 0 {
            return Err(invalid("p_z must be >= 1"));
        }
        let mut g = rng.generator();
        let z0 = Array2::from_shape_fn((d, p_z), |_| standard_normal(&mut g));
        let z1 = Array2::from_shape_fn((d, p_z), |_| standard_normal(&mut g));
        let mut mech = Mechanism::zeros(kind, d, hidden);
        match kind {
            MechanismKind::Linear => {
                let std = 0.1f64.sqrt();
                for v in &mut mech.theta {
                    *v = std * standard_normal(&mut g);
                }
            }
            _ => {
                let h = hidden;
                let block = mech.block_len();
                let (s1, s2) = ((2.0 / (d + h) as f64).sqrt(), (2.0 / (h + 1) as f64).sqrt());
                for j in 0..d {
                    let b = &mut mech.theta[j * block..(j + 1) * block];
                    for v in &mut b[..d * h] {
                        *v = s1 * standard_normal(&mut g);
                    }
                    for v in &mut b[d * h + h..d * h + 2 * h] {
                        *v = s2 * standard_normal(&mut g);
                    }
                }
            }
        }
        Ok(Self { z0, z1, alpha, mechanism: mech })
    }

    pub fn d(&self) -> usize {
        self.z0.nrows()
    }

    pub fn p_z(&self) -> usize {
        self.z0.ncols()
    }

    pub fn edge_logits(&self) -> Array2<f64> {
        edge_logits(self.z0.view(), self.z1.view(), self.alpha)
    }

    fn validate(&self) -> Result<()> {
        if self.z0.dim() != self.z1.dim() || self.mechanism.d != self.d() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.d(), self.p_z()],
                got: vec![self.z1.nrows(), self.z1.ncols(), self.mechanism.d],
            });
        }
        Ok(())
    }
}

/// `alpha * <z0_i, z1_j>` with `-inf` on the diagonal.
pub fn edge_logits(z0: ArrayView2<f64>, z1: ArrayView2<f64>, alpha: f64) -> Array2<f64> {
    let mut l = z0.dot(&z1.t()) * alpha;
    l.diag_mut().fill(f64::NEG_INFINITY);
    l
}

/// Elementwise Gumbel-sigmoid graph sample; `hard` thresholds `logit + L > 0`.
pub fn sample_graph(rng: &RngState, model: &LatentModel, tau: f64, hard: bool) -> Result<Array2<f64>> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    let logits = model.edge_logits();
    let mut g = rng.generator();
    Ok(logits.mapv(|l| {
        let noise = logistic_noise(&mut g);
        if !l.is_finite() {
            0.0
        } else if hard {
            if l + noise > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            gumbel_sigmoid_with_noise(l, noise, tau)
        }
    }))
}

/// Architecture of the intervention networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GimConfig {
    pub hidden: Vec<usize>,
    /// Standard deviation of the parameter noise around the head outputs.
    pub eta_h: f64,
}

impl Default for GimConfig {
    fn default() -> Self {
        Self { hidden: vec![100, 100], eta_h: 0.1 }
    }
}

/// Parameters of the generative intervention model: a target network mapping
/// features to per-node target logits, and one head network per intervention
/// parameter group, each reading `[I; gamma]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GimParams {
    pub kind: InterventionKind,
    pub mechanism: MechanismKind,
    pub g_net: Mlp,
    /// Shift: `[psi]`. Hard: `[mean, log_var]`. Hard ZILN: `[mean, log_var, zero_logit]`.
    pub heads: Vec<Mlp>,
    pub eta_h: f64,
}

/// Number of parameter heads for an intervention / mechanism combination.
pub fn head_count(kind: InterventionKind, mech: MechanismKind) -> Result<usize> {
    match (kind, mech) {
        (InterventionKind::Shift, MechanismKind::Ziln) => {
            Err(Error::Unsupported("shift interventions on ZILN mechanisms".into()))
        }
        (InterventionKind::Shift, _) => Ok(1),
        (InterventionKind::Hard, MechanismKind::Ziln) => Ok(3),
        (InterventionKind::Hard, _) => Ok(2),
    }
}

impl GimParams {
    /// Glorot-normal weights and zero biases for every network.
    pub fn init(
        rng: &RngState,
        d: usize,
        feature_dim: usize,
        kind: InterventionKind,
        mech: MechanismKind,
        cfg: &GimConfig,
    ) -> Result<Self> {
        let n_heads = head_count(kind, mech)?;
        let mut g = rng.generator();
        let sizes = |input: usize| {
            let mut s = vec![input];
            s.extend(&cfg.hidden);
            s.push(d);
            s
        };
        let g_net = Mlp::glorot_normal(&sizes(feature_dim), &mut g);
        let heads = (0..n_heads).map(|_| Mlp::glorot_normal(&sizes(d + feature_dim), &mut g)).collect();
        Ok(Self { kind, mechanism: mech, g_net, heads, eta_h: cfg.eta_h })
    }

    pub fn d(&self) -> usize {
        self.g_net.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.g_net.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.g_net.n_params() + self.heads.iter().map(Mlp::n_params).sum::<usize>()
    }

    /// All network parameters concatenated: target network first, then heads.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.g_net.params.clone();
        for h in &self.heads {
            v.extend(&h.params);
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch { expected: vec![self.n_params()], got: vec![flat.len()] });
        }
        let mut off = self.g_net.n_params();
        self.g_net.params.copy_from_slice(&flat[..off]);
        for h in &mut self.heads {
            let n = h.n_params();
            h.params.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// `g_phi(gamma)`: per-node target logits.
    pub fn target_logits(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        self.g_net.forward_one(gamma)
    }

    /// Head outputs `h_phi(I, gamma)`, one vector per head.
    pub fn head_outputs(&self, targets: &[f64], gamma: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut input = targets.to_vec();
        input.extend_from_slice(gamma);
        self.heads.iter().map(|h| h.forward_one(&input)).collect()
    }

    fn to_intervention(&self, targets: &[f64], heads: Vec<Vec<f64>>) -> Intervention {
        let mask: Vec<bool> = targets.iter().map(|&t| t > 0.5).collect();
        let mut heads = heads.into_iter();
        let psi = heads.next().expect("at least one head");
        match self.kind {
            InterventionKind::Shift => Intervention::shift(mask, psi),
            InterventionKind::Hard => {
                let log_var = heads.next().expect("hard interventions have a noise head");
                let zero_logit = heads.next().unwrap_or_default();
                Intervention { kind: InterventionKind::Hard, targets: mask, psi, log_var, zero_logit }
            }
        }
    }

    /// Draw `I` by Gumbel-sigmoid on the target logits and `psi` around the
    /// head outputs with standard deviation `eta_h`. With `hard` the targets
    /// are thresholded before being fed to the heads.
    pub fn sample_intervention(&self, rng: &RngState, gamma: &[f64], tau: f64, hard: bool) -> Result<Intervention> {
        if !(tau > 0.0) {
            return Err(invalid(format!("temperature must be positive, got {tau}")));
        }
        let logits = self.target_logits(gamma)?;
        let mut g = rng.generator();
        let targets: Vec<f64> = logits
            .iter()
            .map(|&l| {
                let noise = logistic_noise(&mut g);
                if hard {
                    if l + noise > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    gumbel_sigmoid_with_noise(l, noise, tau)
                }
            })
            .collect();
        let mut heads = self.head_outputs(&targets, gamma)?;
        for h in &mut heads {
            for v in h.iter_mut() {
                *v += self.eta_h * standard_normal(&mut g);
            }
        }
        Ok(self.to_intervention(&targets, heads))
    }

    /// Mode of the intervention distribution: `I = 1[sigma(g) > 0.5]` and head
    /// means evaluated at that `I`.
    pub fn infer_intervention(&self, gamma: &[f64]) -> Result<Intervention> {
        let targets: Vec<f64> = self
            .target_logits(gamma)?
            .iter()
            .map(|&l| if sigmoid(l) > 0.5 { 1.0 } else { 0.0 })
            .collect();
        let heads = self.head_outputs(&targets, gamma)?;
        Ok(self.to_intervention(&targets, heads))
    }
}

/// Frozen Monte-Carlo noise for one replica `m`.
pub(crate) struct McNoise {
    pub graph: Array2<f64>,
    pub u0: Array1<f64>,
    pub v0: Array1<f64>,
    /// Logistic noise of the targets, one row per interventional environment.
    pub targets: Array2<f64>,
    /// Standard normal parameter noise per head.
    pub params: Vec<Array2<f64>>,
}

impl McNoise {
    pub fn draw(rng: &RngState, m: usize, d: usize, n_int: usize, n_heads: usize) -> Self {
        let base = rng.substream(m as u64);
        let mut g = base.named("graph").generator();
        let graph = Array2::from_shape_fn((d, d), |_| logistic_noise(&mut g));
        let (u0, v0) = nobears::init_vectors(&mut base.named("nobears").generator(), d);
        let mut g = base.named("targets").generator();
        let targets = Array2::from_shape_fn((n_int, d), |_| logistic_noise(&mut g));
        let mut g = base.named("params").generator();
        let params = (0..n_heads)
            .map(|_| Array2::from_shape_fn((n_int, d), |_| standard_normal(&mut g)))
            .collect();
        Self { graph, u0, v0, targets, params }
    }
}
