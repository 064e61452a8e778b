//! Entropy-regularized Wasserstein-2 distance by log-domain Sinkhorn.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::logsumexp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub eps: f64,
    pub max_iters: usize,
    /// L1 violation of the row marginals that counts as converged.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { eps: 0.1, max_iters: 10_000, tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct Sinkhorn {
    /// `sqrt(max(0, raw))`.
    pub value: f64,
    /// `<P, C> - eps H(P)` before clamping.
    pub raw: f64,
    pub transport_cost: f64,
    /// `H(P) = -sum P log P - 1`.
    pub entropy: f64,
    pub converged: bool,
    /// Sweeps at the target `eps`, after the warm start.
    pub iterations: usize,
    pub plan: Array2<f64>,
}

/// Squared Euclidean distances between the rows of `x` and `y`.
pub fn sq_cost(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let xn: Array1<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let yn: Array1<f64> = y.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut c = x.dot(&y.t()) * -2.0;
    for ((i, j), v) in c.indexed_iter_mut() {
        *v = (*v + xn[i] + yn[j]).max(0.0);
    }
    c
}

/// Sweeps per warm-start stage.
const WARM_ITERS: usize = 20;
/// Scalings outside `[1 / ABSORB, ABSORB]` are folded into the log duals.
const ABSORB: f64 = 1e50;

struct Duals {
    f: Array1<f64>,
    g: Array1<f64>,
    log_a: f64,
    log_b: f64,
    buf_n: Vec<f64>,
    buf_m: Vec<f64>,
}

impl Duals {
    fn new(n: usize, m: usize) -> Self {
        Self {
            f: Array1::zeros(n),
            g: Array1::zeros(m),
            log_a: -(n as f64).ln(),
            log_b: -(m as f64).ln(),
            buf_n: vec![0.0; n],
            buf_m: vec![0.0; m],
        }
    }

    /// One log-domain update of `f` then `g`.
    fn log_sweep(&mut self, c: &Array2<f64>, eps: f64) {
        let (n, m) = c.dim();
        for i in 0..n {
            for j in 0..m {
                self.buf_m[j] = (self.g[j] - c[[i, j]]) / eps;
            }
            self.f[i] = eps * (self.log_a - logsumexp(&self.buf_m));
        }
        for j in 0..m {
            for i in 0..n {
                self.buf_n[i] = (self.f[i] - c[[i, j]]) / eps;
            }
            self.g[j] = eps * (self.log_b - logsumexp(&self.buf_n));
        }
    }

    fn kernel(&self, c: &Array2<f64>, eps: f64) -> Array2<f64> {
        Array2::from_shape_fn(c.dim(), |(i, j)| ((self.f[i] + self.g[j] - c[[i, j]]) / eps).exp())
    }

    fn absorb(&mut self, u: &Array1<f64>, v: &Array1<f64>, eps: f64) {
        self.f.zip_mut_with(u, |f, u| *f += eps * u.ln());
        self.g.zip_mut_with(v, |g, v| *g += eps * v.ln());
    }

    /// Up to `iters` scaling sweeps `u = a / Kv`, `v = b / K^T u` on the
    /// kernel of the current duals, stopping once the L1 row violation is
    /// below `tol` (columns are exact after each sweep). Returns the sweep
    /// count and whether the tolerance was met.
    fn scale(&mut self, c: &Array2<f64>, eps: f64, iters: usize, tol: f64) -> (usize, bool) {
        let (n, m) = c.dim();
        let (a, b) = (self.log_a.exp(), self.log_b.exp());
        self.log_sweep(c, eps);
        let mut k = self.kernel(c, eps);
        let mut u = Array1::<f64>::ones(n);
        let mut v = Array1::<f64>::ones(m);
        let mut kv = k.dot(&v);
        for it in 1..=iters {
            u = kv.mapv(|s| a / s);
            v = k.t().dot(&u).mapv(|s| b / s);
            kv = k.dot(&v);
            let violation: f64 = u.iter().zip(&kv).map(|(u, s)| (u * s - a).abs()).sum();
            let extreme = |x: &f64| !(x.is_finite() && *x < ABSORB && *x > 1.0 / ABSORB);
            if !violation.is_finite() || u.iter().chain(&v).any(extreme) {
                // underflowed kernel entries: restart from normalized log duals
                if u.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0) {
                    self.absorb(&u, &v, eps);
                }
                self.log_sweep(c, eps);
                k = self.kernel(c, eps);
                u.fill(1.0);
                v.fill(1.0);
                kv = k.dot(&v);
                continue;
            }
            if violation < tol {
                self.absorb(&u, &v, eps);
                return (it, true);
            }
        }
        self.absorb(&u, &v, eps);
        (iters, false)
    }
}

pub fn sinkhorn_w2(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &SinkhornConfig) -> Result<Sinkhorn> {
    let (n, m) = (x.nrows(), y.nrows());
    if n == 0 || m == 0 {
        return Err(invalid("sinkhorn needs at least one row on each side"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch { expected: vec![x.ncols()], got: vec![y.ncols()] });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn input".into()));
    }
    if !(cfg.eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {}", cfg.eps)));
    }
    let eps = cfg.eps;
    let c = sq_cost(x, y);
    let mut duals = Duals::new(n, m);
    // warm start from coarser regularizations; the fixed point at `eps` is
    // unique, only the iteration count changes
    let c_max = c.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut stages = Vec::new();
    let mut e = eps * 2.0;
    while e < c_max {
        stages.push(e);
        e *= 2.0;
    }
    for &e in stages.iter().rev() {
        duals.scale(&c, e, WARM_ITERS, 0.0);
    }
    let (iterations, converged) = duals.scale(&c, eps, cfg.max_iters, cfg.tol);
    let (f, g) = (&duals.f, &duals.g);
    let plan = Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp());
    let transport_cost = (&plan * &c).sum();
    let entropy = -plan.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>() - 1.0;
    let raw = transport_cost - eps * entropy;
    if !converged {
        log::warn!("sinkhorn did not converge in {} iterations", cfg.max_iters);
    }
    Ok(Sinkhorn { value: raw.max(0.0).sqrt(), raw, transport_cost, entropy, converged, iterations, plan })
}
