//! Per-environment log-likelihood of the training data under one sampled graph
//! and one sampled intervention per environment, with gradients.
//!
//! Two backends: a sufficient-statistics path for linear-Gaussian mechanisms
//! (cost independent of the row count) and a general row-wise path for
//! network mechanisms. Both compute the same quantity.

use ndarray::{Array1, Array2};

use super::objective::TrainData;
use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::scm::{softplus, InterventionKind, Mechanism, MechanismKind, LN_2PI};

/// Sampled interventions of the interventional environments.
pub(crate) struct Sampled<'a> {
    /// Relaxed or hard targets, one row per interventional environment.
    pub targets: &'a Array2<f64>,
    /// Parameter draws per head, same layout as `targets`.
    pub heads: &'a [Array2<f64>],
}

pub(crate) struct LikGrad {
    pub graph: Array2<f64>,
    pub theta: Vec<f64>,
    pub log_var: Vec<f64>,
    pub targets: Array2<f64>,
    pub heads: Vec<Array2<f64>>,
}

impl LikGrad {
    fn zeros(mech: &Mechanism, n_int: usize, n_heads: usize) -> Self {
        let d = mech.d;
        Self {
            graph: Array2::zeros((d, d)),
            theta: vec![0.0; mech.n_theta()],
            log_var: vec![0.0; d],
            targets: Array2::zeros((n_int, d)),
            heads: (0..n_heads).map(|_| Array2::zeros((n_int, d))).collect(),
        }
    }
}

/// Log-density of one value and its partials.
#[derive(Default)]
struct Dens {
    value: f64,
    d_mean: f64,
    d_log_var: f64,
    d_zero_logit: f64,
}

fn gauss(x: f64, mean: f64, log_var: f64) -> Dens {
    let r = x - mean;
    let prec = (-log_var).exp();
    Dens {
        value: -0.5 * (LN_2PI + log_var) - 0.5 * r * r * prec,
        d_mean: r * prec,
        d_log_var: -0.5 + 0.5 * r * r * prec,
        d_zero_logit: 0.0,
    }
}

fn ziln(x: f64, zero_logit: f64, mean: f64, log_var: f64) -> Dens {
    if x == 0.0 {
        return Dens { value: -softplus(-zero_logit), d_zero_logit: sigmoid(-zero_logit), ..Dens::default() };
    }
    let lx = x.ln();
    let g = gauss(lx, mean, log_var);
    Dens { value: -softplus(zero_logit) + g.value - lx, d_zero_logit: -sigmoid(zero_logit), ..g }
}

fn non_finite(data: &TrainData, k: usize, row: Option<usize>, m: usize) -> Error {
    let row = row.map(|r| format!(", row {r}")).unwrap_or_default();
    Error::NonFinite(format!("log-likelihood of environment '{}'{row} at MC sample {m}", data.envs[k].id))
}

/// Total log-likelihood `sum_k sum_j (1 - I_kj) A_kj + I_kj B_kj` where `A` is
/// the observational conditional and `B` the intervened one. Observational
/// environments always use `I = 0`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn likelihood(
    mech: &Mechanism,
    kind: InterventionKind,
    graph: &Array2<f64>,
    data: &TrainData,
    iv: &Sampled,
    want_grad: bool,
    use_stats: bool,
    m: usize,
) -> Result<(f64, Option<LikGrad>)> {
    if use_stats && mech.kind == MechanismKind::Linear {
        linear_stats(mech, kind, graph, data, iv, want_grad, m)
    } else {
        rowwise(mech, kind, graph, data, iv, want_grad, m)
    }
}

fn linear_stats(
    mech: &Mechanism,
    kind: InterventionKind,
    graph: &Array2<f64>,
    data: &TrainData,
    iv: &Sampled,
    want_grad: bool,
    m: usize,
) -> Result<(f64, Option<LikGrad>)> {
    let d = mech.d;
    let mut grad = want_grad.then(|| LikGrad::zeros(mech, iv.targets.nrows(), iv.heads.len()));
    let mut total = 0.0;
    for j in 0..d {
        let w = Array1::from_shape_fn(d, |i| graph[[i, j]] * mech.theta[i * d + j]);
        let sigma = mech.log_var[j];
        let prec = (-sigma).exp();
        let mut dw = Array1::<f64>::zeros(d);
        for k in 0..data.envs.len() {
            let st = &data.stats[k];
            let n = st.n;
            let s_col = st.ss.column(j);
            let sw = st.ss.dot(&w);
            let q = st.ss[[j, j]] - 2.0 * w.dot(&s_col) + w.dot(&sw);
            let lin = st.s[j] - w.dot(&st.s);
            let a = -0.5 * n * (LN_2PI + sigma) - 0.5 * q * prec;
            let Some(ki) = data.int_index[k] else {
                if !a.is_finite() {
                    return Err(non_finite(data, k, None, m));
                }
                total += a;
                if let Some(gr) = grad.as_mut() {
                    dw.scaled_add(prec, &(&s_col - &sw));
                    gr.log_var[j] += -0.5 * n + 0.5 * q * prec;
                }
                continue;
            };
            let t = iv.targets[[ki, j]];
            let psi = iv.heads[0][[ki, j]];
            let (b, shifted_q) = match kind {
                InterventionKind::Shift => {
                    let q2 = q - 2.0 * psi * lin + n * psi * psi;
                    (-0.5 * n * (LN_2PI + sigma) - 0.5 * q2 * prec, q2)
                }
                InterventionKind::Hard => {
                    let v = iv.heads[1][[ki, j]];
                    let sse = st.ss[[j, j]] - 2.0 * psi * st.s[j] + n * psi * psi;
                    (-0.5 * n * (LN_2PI + v) - 0.5 * sse * (-v).exp(), sse)
                }
            };
            if !a.is_finite() || !b.is_finite() {
                return Err(non_finite(data, k, None, m));
            }
            total += (1.0 - t) * a + t * b;
            let Some(gr) = grad.as_mut() else { continue };
            gr.targets[[ki, j]] += b - a;
            let (ca, cb) = (1.0 - t, t);
            dw.scaled_add(ca * prec, &(&s_col - &sw));
            gr.log_var[j] += ca * (-0.5 * n + 0.5 * q * prec);
            match kind {
                InterventionKind::Shift => {
                    dw.scaled_add(cb * prec, &(&(&s_col - &sw) - &(&st.s * psi)));
                    gr.log_var[j] += cb * (-0.5 * n + 0.5 * shifted_q * prec);
                    gr.heads[0][[ki, j]] += cb * prec * (lin - n * psi);
                }
                InterventionKind::Hard => {
                    let v = iv.heads[1][[ki, j]];
                    let pv = (-v).exp();
                    gr.heads[0][[ki, j]] += cb * pv * (st.s[j] - n * psi);
                    gr.heads[1][[ki, j]] += cb * (-0.5 * n + 0.5 * shifted_q * pv);
                }
            }
        }
        if let Some(gr) = grad.as_mut() {
            for i in 0..d {
                gr.theta[i * d + j] += dw[i] * graph[[i, j]];
                gr.graph[[i, j]] += dw[i] * mech.theta[i * d + j];
            }
        }
    }
    Ok((total, grad))
}

fn rowwise(
    mech: &Mechanism,
    kind: InterventionKind,
    graph: &Array2<f64>,
    data: &TrainData,
    iv: &Sampled,
    want_grad: bool,
    m: usize,
) -> Result<(f64, Option<LikGrad>)> {
    let d = mech.d;
    let is_ziln = mech.kind == MechanismKind::Ziln;
    let x = data.stacked.view();
    let mut grad = want_grad.then(|| LikGrad::zeros(mech, iv.targets.nrows(), iv.heads.len()));
    let mut total = 0.0;
    for j in 0..d {
        let gcol: Vec<f64> = graph.column(j).to_vec();
        let eval = mech.node_forward(j, &gcol, x);
        let sigma = mech.log_var[j];
        let zl = if is_ziln { mech.zero_logit(j) } else { 0.0 };
        let mut dmean = Array1::<f64>::zeros(x.nrows());
        let mut d_sigma = 0.0;
        let mut d_zl = 0.0;
        for k in 0..data.envs.len() {
            let rows = data.offsets[k]..data.offsets[k + 1];
            let obs_density = |r: usize| {
                if is_ziln {
                    ziln(x[[r, j]], zl, eval.means[r], sigma)
                } else {
                    gauss(x[[r, j]], eval.means[r], sigma)
                }
            };
            let Some(ki) = data.int_index[k] else {
                let mut a = 0.0;
                for r in rows {
                    let da = obs_density(r);
                    a += da.value;
                    dmean[r] += da.d_mean;
                    d_sigma += da.d_log_var;
                    d_zl += da.d_zero_logit;
                }
                if !a.is_finite() {
                    return Err(non_finite(data, k, first_bad_row(data, k, j, &eval.means, mech, sigma, zl), m));
                }
                total += a;
                continue;
            };
            let t = iv.targets[[ki, j]];
            let (ca, cb) = (1.0 - t, t);
            let psi = iv.heads[0][[ki, j]];
            let (mut a, mut b) = (0.0, 0.0);
            let (mut d_psi, mut d_v, mut d_zlh) = (0.0, 0.0, 0.0);
            for r in rows {
                let da = obs_density(r);
                a += da.value;
                dmean[r] += ca * da.d_mean;
                d_sigma += ca * da.d_log_var;
                d_zl += ca * da.d_zero_logit;
                let db = match kind {
                    InterventionKind::Shift => {
                        let db = gauss(x[[r, j]] - psi, eval.means[r], sigma);
                        dmean[r] += cb * db.d_mean;
                        d_sigma += cb * db.d_log_var;
                        d_psi += db.d_mean;
                        db
                    }
                    InterventionKind::Hard => {
                        let v = iv.heads[1][[ki, j]];
                        let db = if is_ziln {
                            ziln(x[[r, j]], iv.heads[2][[ki, j]], psi, v)
                        } else {
                            gauss(x[[r, j]], psi, v)
                        };
                        d_psi += db.d_mean;
                        d_v += db.d_log_var;
                        d_zlh += db.d_zero_logit;
                        db
                    }
                };
                b += db.value;
            }
            if !a.is_finite() || !b.is_finite() {
                return Err(non_finite(data, k, first_bad_row(data, k, j, &eval.means, mech, sigma, zl), m));
            }
            total += ca * a + cb * b;
            if let Some(gr) = grad.as_mut() {
                gr.targets[[ki, j]] += b - a;
                gr.heads[0][[ki, j]] += cb * d_psi;
                if kind == InterventionKind::Hard {
                    gr.heads[1][[ki, j]] += cb * d_v;
                    if is_ziln {
                        gr.heads[2][[ki, j]] += cb * d_zlh;
                    }
                }
            }
        }
        if let Some(gr) = grad.as_mut() {
            gr.log_var[j] += d_sigma;
            if is_ziln {
                gr.theta[mech.zero_logit_index(j)] += d_zl;
            }
            let mut dg = vec![0.0; d];
            mech.node_backward(j, &gcol, x, &eval, &dmean, &mut gr.theta, &mut dg);
            for i in 0..d {
                gr.graph[[i, j]] += dg[i];
            }
        }
    }
    Ok((total, grad))
}

#[allow(clippy::too_many_arguments)]
fn first_bad_row(
    data: &TrainData,
    k: usize,
    j: usize,
    means: &Array1<f64>,
    mech: &Mechanism,
    sigma: f64,
    zl: f64,
) -> Option<usize> {
    (data.offsets[k]..data.offsets[k + 1])
        .find(|&r| {
            let x = data.stacked[[r, j]];
            let v = if mech.kind == MechanismKind::Ziln {
                ziln(x, zl, means[r], sigma).value
            } else {
                gauss(x, means[r], sigma).value
            };
            !v.is_finite()
        })
        .map(|r| r - data.offsets[k])
}
