//! Spectral-radius acyclicity score by power iteration.
//!
//! The score is differentiated through every iteration (not only the final
//! quotient), so it has an exact gradient that finite differences reproduce.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::numerics::RngState;

pub const DEFAULT_ITERS: usize = 30;
const EPS: f64 = 1e-12;

/// Random positive starting vectors for the left and right iterates.
pub fn init_vectors<R: Rng + ?Sized>(rng: &mut R, d: usize) -> (Array1<f64>, Array1<f64>) {
    let u = Array1::from_shape_fn(d, |_| 0.5 + rng.random::<f64>());
    let v = Array1::from_shape_fn(d, |_| 0.5 + rng.random::<f64>());
    (u, v)
}

/// Spectral-radius estimate of a nonnegative matrix; 0 on DAG adjacencies.
pub fn nobears(g: &Array2<f64>, rng: &RngState, iters: usize) -> f64 {
    let (u, v) = init_vectors(&mut rng.generator(), g.nrows());
    nobears_from(g, u, v, iters).value
}

pub struct NoBears {
    pub value: f64,
    us: Vec<Array1<f64>>,
    vs: Vec<Array1<f64>>,
    /// Pre-normalization norms of each update; empty if the iteration collapsed.
    u_norms: Vec<f64>,
    v_norms: Vec<f64>,
    denom: f64,
}

/// Run `iters` updates `u <- G^T u / |G^T u|`, `v <- G v / |G v|` and return
/// `sqrt(u^T G^2 v / u^T v)`, keeping the iterates for [`NoBears::backward`].
///
/// The quotient is taken on `G^2` because the iterates of a matrix whose
/// dominant eigenvalues are `+rho` and `-rho` (any 2-cycle) oscillate forever,
/// so `u^T G v / u^T v` never settles; the square-rooted `G^2` quotient is
/// immune to that period-2 oscillation and agrees with it otherwise.
pub fn nobears_from(g: &Array2<f64>, u0: Array1<f64>, v0: Array1<f64>, iters: usize) -> NoBears {
    let mut us = vec![u0];
    let mut vs = vec![v0];
    let mut u_norms = Vec::with_capacity(iters);
    let mut v_norms = Vec::with_capacity(iters);
    let collapsed = |us, vs| NoBears { value: 0.0, us, vs, u_norms: Vec::new(), v_norms: Vec::new(), denom: 0.0 };
    for _ in 0..iters {
        let a = g.t().dot(us.last().unwrap());
        let b = g.dot(vs.last().unwrap());
        let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
        if na < EPS || nb < EPS {
            return collapsed(us, vs);
        }
        us.push(a / na);
        vs.push(b / nb);
        u_norms.push(na);
        v_norms.push(nb);
    }
    let (u, v) = (us.last().unwrap(), vs.last().unwrap());
    let denom = u.dot(v);
    let q = u.dot(&g.dot(&g.dot(v))) / denom;
    if denom.abs() < EPS || !(q > EPS * EPS) {
        return collapsed(us, vs);
    }
    NoBears { value: q.sqrt(), us, vs, u_norms, v_norms, denom }
}

impl NoBears {
    /// Gradient of `value` with respect to `g`.
    pub fn backward(&self, g: &Array2<f64>) -> Array2<f64> {
        let d = g.nrows();
        let mut dg = Array2::zeros((d, d));
        if self.denom == 0.0 {
            return dg;
        }
        let t = self.u_norms.len();
        let (u, v) = (&self.us[t], &self.vs[t]);
        let s = self.denom;
        // value = sqrt(q), q = u^T G G v / s
        let scale = 0.5 / self.value;
        let q = self.value * self.value;
        let gv = g.dot(v);
        let gtu = g.t().dot(u);
        for i in 0..d {
            for j in 0..d {
                dg[[i, j]] = scale * (u[i] * gv[j] + gtu[i] * v[j]) / s;
            }
        }
        let mut du = (g.dot(&gv) - &(v * q)) * (scale / s);
        let mut dv = (g.t().dot(&gtu) - &(u * q)) * (scale / s);
        for k in (1..=t).rev() {
            // u_k = a / |a|, a = G^T u_{k-1}
            let uk = &self.us[k];
            let da = (&du - &(uk * uk.dot(&du))) / self.u_norms[k - 1];
            let prev = &self.us[k - 1];
            for i in 0..d {
                for j in 0..d {
                    dg[[i, j]] += prev[i] * da[j];
                }
            }
            du = g.dot(&da);
            // v_k = b / |b|, b = G v_{k-1}
            let vk = &self.vs[k];
            let db = (&dv - &(vk * vk.dot(&dv))) / self.v_norms[k - 1];
            let prev = &self.vs[k - 1];
            for i in 0..d {
                for j in 0..d {
                    dg[[i, j]] += db[i] * prev[j];
                }
            }
            dv = g.t().dot(&db);
        }
        dg
    }
}
