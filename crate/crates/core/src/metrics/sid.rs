//! Structural intervention distance via the graphical adjustment criterion.

use crate::error::{Error, Result};
use crate::graph::Dag;

/// Number of ordered pairs `(i, j)` for which the parents of `i` in `pred` do
/// not identify `p(x_j | do(x_i))` in `truth`.
///
/// If `j` is a parent of `i` in `pred`, the predicted effect is zero and the
/// pair is wrong iff `j` descends from `i` in `truth`. Otherwise the parent set
/// `Z` must be a valid adjustment set: no member descends from a node on a
/// directed `i -> j` path (other than `i`), and `Z` d-separates `i` and `j`
/// once the first edge of every such path is removed.
pub fn sid(pred: &Dag, truth: &Dag) -> Result<usize> {
    let d = truth.d();
    if pred.d() != d {
        return Err(Error::ShapeMismatch { expected: vec![d], got: vec![pred.d()] });
    }
    let desc: Vec<Vec<bool>> = (0..d).map(|i| truth.descendants(i)).collect();
    let anc: Vec<Vec<bool>> = (0..d).map(|j| truth.ancestors(j)).collect();
    let mut count = 0;
    for i in 0..d {
        let z: Vec<bool> = {
            let mut z = vec![false; d];
            for p in pred.parents(i) {
                z[p] = true;
            }
            z
        };
        for j in (0..d).filter(|&j| j != i) {
            if z[j] {
                count += usize::from(desc[i][j]);
                continue;
            }
            if !valid_adjustment(truth, i, j, &z, &desc, &anc) {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// `descendants` and `ancestors` include the node itself.
fn valid_adjustment(g: &Dag, i: usize, j: usize, z: &[bool], desc: &[Vec<bool>], anc: &[Vec<bool>]) -> bool {
    let d = g.d();
    // nodes on proper causal paths i -> ... -> j, excluding i
    let on_path: Vec<bool> = (0..d).map(|w| w != i && desc[i][w] && anc[j][w]).collect();
    let forbidden = (0..d).any(|w| on_path[w] && (0..d).any(|v| z[v] && desc[w][v]));
    if forbidden {
        return false;
    }
    let edge = |a: usize, b: usize| g.has_edge(a, b) && !(a == i && on_path[b]);
    d_separated(d, edge, i, j, z)
}

/// d-separation of `a` and `b` given `z` by moralizing the ancestral graph.
fn d_separated(d: usize, edge: impl Fn(usize, usize) -> bool, a: usize, b: usize, z: &[bool]) -> bool {
    let mut keep = vec![false; d];
    let mut stack: Vec<usize> = (0..d).filter(|&v| v == a || v == b || z[v]).collect();
    for &v in &stack {
        keep[v] = true;
    }
    while let Some(v) = stack.pop() {
        for u in 0..d {
            if edge(u, v) && !keep[u] {
                keep[u] = true;
                stack.push(u);
            }
        }
    }
    let mut adj = vec![vec![false; d]; d];
    for v in (0..d).filter(|&v| keep[v]) {
        let parents: Vec<usize> = (0..d).filter(|&u| keep[u] && edge(u, v)).collect();
        for (k, &p) in parents.iter().enumerate() {
            adj[p][v] = true;
            adj[v][p] = true;
            for &q in &parents[k + 1..] {
                adj[p][q] = true;
                adj[q][p] = true;
            }
        }
    }
    let mut seen = vec![false; d];
    let mut stack = vec![a];
    seen[a] = true;
    while let Some(v) = stack.pop() {
        if v == b {
            return false;
        }
        for u in 0..d {
            if adj[v][u] && !seen[u] && !z[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    true
}
