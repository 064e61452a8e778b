//! Directed acyclic graphs, random graph models and ordering utilities.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::RngState;

/// Binary adjacency of a DAG; `has_edge(i, j)` means `i -> j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DagRepr", into = "DagRepr")]
pub struct Dag {
    d: usize,
    adj: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct DagRepr {
    d: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<DagRepr> for Dag {
    type Error = Error;

    fn try_from(r: DagRepr) -> Result<Self> {
        Dag::from_edges(r.d, r.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<Dag> for DagRepr {
    fn from(g: Dag) -> Self {
        DagRepr { d: g.d, edges: g.edges().map(|(i, j)| [i, j]).collect() }
    }
}

impl Dag {
    pub fn empty(d: usize) -> Self {
        Self { d, adj: vec![false; d * d] }
    }

    pub fn from_edges(d: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(d);
        for (i, j) in edges {
            if i >= d || j >= d {
                return Err(invalid(format!("edge ({i}, {j}) out of range for d = {d}")));
            }
            if i == j {
                return Err(invalid(format!("self-loop on node {i}")));
            }
            g.adj[i * d + j] = true;
        }
        topo_order_of(d, |i, j| g.adj[i * d + j])?;
        Ok(g)
    }

    /// Build from a matrix whose nonzero entries are edges.
    pub fn from_adjacency(adj: &Array2<f64>) -> Result<Self> {
        let d = adj.nrows();
        if adj.ncols() != d {
            return Err(Error::ShapeMismatch { expected: vec![d, d], got: adj.shape().to_vec() });
        }
        Self::from_edges(
            d,
            (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|&(i, j)| adj[[i, j]] != 0.0),
        )
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.d + j]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d = self.d;
        (0..d * d).filter(move |&k| self.adj[k]).map(move |k| (k / d, k % d))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|e| **e).count()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// Nodes reachable from `i` by a directed path of length >= 0 (includes `i`).
    pub fn descendants(&self, i: usize) -> Vec<bool> {
        let mut seen = vec![false; self.d];
        let mut stack = vec![i];
        seen[i] = true;
        while let Some(u) = stack.pop() {
            for v in 0..self.d {
                if self.has_edge(u, v) && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Nodes with a directed path to `j` (includes `j`).
    pub fn ancestors(&self, j: usize) -> Vec<bool> {
        let mut seen = vec![false; self.d];
        let mut stack = vec![j];
        seen[j] = true;
        while let Some(v) = stack.pop() {
            for u in 0..self.d {
                if self.has_edge(u, v) && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    }

    pub fn adjacency(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.d, self.d), |(i, j)| if self.has_edge(i, j) { 1.0 } else { 0.0 })
    }

    pub fn topo_order(&self) -> Vec<usize> {
        topo_order_of(self.d, |i, j| self.has_edge(i, j)).expect("Dag is acyclic by construction")
    }
}

/// Kahn's algorithm on a square matrix whose nonzero entries are edges.
pub fn topo_order(adj: &Array2<f64>) -> Result<Vec<usize>> {
    let d = adj.nrows();
    if adj.ncols() != d {
        return Err(Error::ShapeMismatch { expected: vec![d, d], got: adj.shape().to_vec() });
    }
    topo_order_of(d, |i, j| adj[[i, j]] != 0.0)
}

pub fn is_acyclic(adj: &Array2<f64>) -> bool {
    adj.nrows() == adj.ncols() && topo_order(adj).is_ok()
}

/// One directed cycle as a node sequence `c0 -> c1 -> ... -> c0`, if any.
pub fn find_cycle(adj: &Array2<f64>) -> Option<Vec<usize>> {
    let d = adj.nrows();
    let node = match topo_order(adj) {
        Err(Error::Cycle { node }) => node,
        _ => return None,
    };
    // walk successors restricted to nodes that can reach `node` until it recurs
    let reaches_node: Vec<bool> = {
        let mut seen = vec![false; d];
        let mut stack = vec![node];
        seen[node] = true;
        while let Some(v) = stack.pop() {
            for u in 0..d {
                if adj[[u, v]] != 0.0 && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    };
    let mut path = vec![node];
    let mut pos = vec![usize::MAX; d];
    pos[node] = 0;
    let mut cur = node;
    loop {
        let next = (0..d).find(|&v| adj[[cur, v]] != 0.0 && reaches_node[v])?;
        if pos[next] != usize::MAX {
            return Some(path[pos[next]..].to_vec());
        }
        pos[next] = path.len();
        path.push(next);
        cur = next;
    }
}

fn topo_order_of(d: usize, edge: impl Fn(usize, usize) -> bool) -> Result<Vec<usize>> {
    let mut indeg = vec![0usize; d];
    for i in 0..d {
        for j in 0..d {
            if edge(i, j) {
                indeg[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..d).rev().filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(u) = ready.pop() {
        order.push(u);
        for v in (0..d).rev() {
            if edge(u, v) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(v);
                }
            }
        }
    }
    if order.len() == d {
        return Ok(order);
    }
    // walk predecessors among the stuck nodes until one repeats: it lies on a cycle
    let stuck: Vec<bool> = indeg.iter().map(|&k| k > 0).collect();
    let mut visited = vec![false; d];
    let mut cur = (0..d).find(|&j| stuck[j]).expect("some node is stuck");
    while !visited[cur] {
        visited[cur] = true;
        cur = (0..d).find(|&u| stuck[u] && edge(u, cur)).expect("stuck nodes have stuck parents");
    }
    Err(Error::Cycle { node: cur })
}

/// Erdos-Renyi DAG: random node order, each forward pair kept with
/// probability `expected_edges / (d (d - 1) / 2)`.
pub fn sample_er(rng: &RngState, d: usize, expected_edges: f64) -> Result<Dag> {
    let pairs = d * d.saturating_sub(1) / 2;
    let p = if pairs == 0 { 0.0 } else { expected_edges / pairs as f64 };
    if !(0.0..=1.0).contains(&p) || (pairs == 0 && expected_edges != 0.0 && d > 1) {
        return Err(invalid(format!(
            "expected_edges {expected_edges} gives edge probability {p} outside [0, 1]"
        )));
    }
    let mut g = rng.generator();
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut g);
    let mut dag = Dag::empty(d);
    for a in 0..d {
        for b in a + 1..d {
            if g.random::<f64>() < p {
                dag.adj[perm[a] * d + perm[b]] = true;
            }
        }
    }
    Ok(dag)
}

/// Scale-free DAG by preferential attachment.
///
/// Starts from an `m`-clique oriented by arrival index; every later node
/// attaches to `m` distinct earlier nodes chosen with probability proportional
/// to `degree + 1`, with edges pointing from the earlier to the new node.
/// Node labels are randomly permuted afterwards.
pub fn sample_sf(rng: &RngState, d: usize, m: usize) -> Result<Dag> {
    if m < 1 || m >= d {
        return Err(invalid(format!("scale-free graphs need 1 <= m < d, got m = {m}, d = {d}")));
    }
    let mut g = rng.generator();
    let mut degree = vec![0usize; d];
    let mut edges = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            edges.push((a, b));
            degree[a] += 1;
            degree[b] += 1;
        }
    }
    for t in m..d {
        let mut chosen = Vec::with_capacity(m);
        for _ in 0..m {
            let total: f64 = (0..t).filter(|u| !chosen.contains(u)).map(|u| degree[u] as f64 + 1.0).sum();
            let mut r = g.random::<f64>() * total;
            let mut pick = None;
            for u in (0..t).filter(|u| !chosen.contains(u)) {
                r -= degree[u] as f64 + 1.0;
                pick = Some(u);
                if r < 0.0 {
                    break;
                }
            }
            chosen.push(pick.expect("t > m - 1 candidates"));
        }
        for u in chosen {
            edges.push((u, t));
            degree[u] += 1;
            degree[t] += 1;
        }
    }
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut g);
    Dag::from_edges(d, edges.into_iter().map(|(a, b)| (perm[a], perm[b])))
}
