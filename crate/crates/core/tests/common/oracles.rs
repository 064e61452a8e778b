//! Independent oracles shared by the metric tests and the acceptance suite:
//! a linear-Gaussian SID check, set-based F1, a direct-sum KDE and
//! brute-force assignment.

use gimforge::graph::Dag;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

pub const D: usize = 3;

pub fn all_dags() -> Vec<Dag> {
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut out = Vec::new();
    for code in 0..27usize {
        let mut c = code;
        let mut edges = Vec::new();
        for &(a, b) in &pairs {
            match c % 3 {
                1 => edges.push((a, b)),
                2 => edges.push((b, a)),
                _ => {}
            }
            c /= 3;
        }
        if let Ok(g) = Dag::from_edges(D, edges) {
            out.push(g);
        }
    }
    out
}

/// Weights chosen so that no path products cancel.
pub fn weights(g: &Dag) -> DMatrix<f64> {
    let w = [[0.0, 0.83, -1.27], [0.61, 0.0, 1.09], [-0.74, 1.41, 0.0]];
    DMatrix::from_fn(D, D, |i, j| if g.has_edge(i, j) { w[i][j] } else { 0.0 })
}

pub const NOISE: [f64; D] = [1.0, 1.3, 0.7];

/// Covariance of `x = B^T x + e` with `e ~ N(0, diag(noise))`.
pub fn covariance(b: &DMatrix<f64>, noise: &[f64]) -> DMatrix<f64> {
    let a = (DMatrix::identity(D, D) - b.transpose()).try_inverse().unwrap();
    &a * DMatrix::from_diagonal(&DVector::from_column_slice(noise)) * a.transpose()
}

/// Mean slope in `a` and variance of `x_j` under `do(x_i = a)`.
pub fn true_effect(truth: &Dag, i: usize, j: usize) -> (f64, f64) {
    let mut b = weights(truth);
    b.column_mut(i).fill(0.0);
    let mut noise = NOISE;
    noise[i] = 0.0;
    let a = (DMatrix::identity(D, D) - b.transpose()).try_inverse().unwrap();
    (a[(j, i)], covariance(&b, &noise)[(j, j)])
}

/// Slope and variance given by the adjustment formula with set `z`.
pub fn adjusted_effect(sigma: &DMatrix<f64>, i: usize, j: usize, z: &[usize]) -> (f64, f64) {
    if z.contains(&j) {
        return (0.0, sigma[(j, j)]);
    }
    let s: Vec<usize> = std::iter::once(i).chain(z.iter().copied()).collect();
    let sss = DMatrix::from_fn(s.len(), s.len(), |a, b| sigma[(s[a], s[b])]);
    let ssj = DVector::from_fn(s.len(), |a, _| sigma[(s[a], j)]);
    let beta = sss.try_inverse().unwrap() * &ssj;
    let resid = sigma[(j, j)] - ssj.dot(&beta);
    let bz = beta.rows(1, z.len()).into_owned();
    let szz = DMatrix::from_fn(z.len(), z.len(), |a, b| sigma[(z[a], z[b])]);
    let spread = if z.is_empty() { 0.0 } else { (bz.transpose() * szz * &bz)[(0, 0)] };
    (beta[0], resid + spread)
}

pub fn sid_oracle(pred: &Dag, truth: &Dag) -> usize {
    let sigma = covariance(&weights(truth), &NOISE);
    let mut count = 0;
    for i in 0..D {
        let z = pred.parents(i);
        for j in (0..D).filter(|&j| j != i) {
            let (m0, v0) = true_effect(truth, i, j);
            let (m1, v1) = adjusted_effect(&sigma, i, j, &z);
            if (m0 - m1).abs() > 1e-9 || (v0 - v1).abs() > 1e-9 {
                count += 1;
            }
        }
    }
    count
}

pub fn f1_oracle(pred: &Dag, truth: &Dag) -> f64 {
    let p: Vec<_> = pred.edges().collect();
    let t: Vec<_> = truth.edges().collect();
    if p.is_empty() && t.is_empty() {
        return 1.0;
    }
    let tp = p.iter().filter(|e| t.contains(e)).count() as f64;
    2.0 * tp / (p.len() + t.len()) as f64
}

/// `-mean_y log (1/m) sum_k N(y; x_k, H)` with `H` the unbiased covariance
/// scaled by Scott's factor, written out for two dimensions.
pub fn kde_nll_2d(pred: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let m = pred.nrows() as f64;
    let (mx, my) = (pred.column(0).sum() / m, pred.column(1).sum() / m);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for r in pred.rows() {
        sxx += (r[0] - mx) * (r[0] - mx);
        sxy += (r[0] - mx) * (r[1] - my);
        syy += (r[1] - my) * (r[1] - my);
    }
    let f = m.powf(-1.0 / 3.0) / (m - 1.0);
    let (a, b, c) = (sxx * f, sxy * f, syy * f);
    let det = a * c - b * b;
    let mut total = 0.0;
    for y in truth.rows() {
        let mut dens = 0.0;
        for x in pred.rows() {
            let (u, v) = (y[0] - x[0], y[1] - x[1]);
            let q = (c * u * u - 2.0 * b * u * v + a * v * v) / det;
            dens += (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        }
        total += (dens / m).ln();
    }
    -total / truth.nrows() as f64
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Set-based F1 of two target indicator vectors.
pub fn target_f1_oracle(pred: &[bool], truth: &[bool]) -> f64 {
    let p: Vec<usize> = (0..pred.len()).filter(|&j| pred[j]).collect();
    let t: Vec<usize> = (0..truth.len()).filter(|&j| truth[j]).collect();
    if p.is_empty() && t.is_empty() {
        return 1.0;
    }
    let tp = p.iter().filter(|j| t.contains(j)).count() as f64;
    2.0 * tp / (p.len() + t.len()) as f64
}

/// Smallest mean squared matching cost over all permutations.
pub fn best_assignment(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = x.nrows();
    permutations(n)
        .into_iter()
        .map(|p| {
            (0..n)
                .map(|i| (0..x.ncols()).map(|k| (x[[i, k]] - y[[p[i], k]]).powi(2)).sum::<f64>())
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
}
