//! Reference results by exhaustive path enumeration.
//!
//! Everything here is exponential in the graph size and only meant for small
//! instances, as ground truth for the DP engines.

use crate::dag::{check_edge_len, Dag};
use crate::dag_dp::{ExpectedPath, TransitionMatrix};
use crate::error::{Error, Result};
use crate::smoothed_max::{max_omega, Regularizer};

pub const DEFAULT_PATH_CAP: u64 = 1_000_000;

/// Source-to-sink paths as edge-id sequences, in depth-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Vec<usize>>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.paths.iter().map(Vec::as_slice)
    }

    pub fn get(&self, k: usize) -> &[usize] {
        &self.paths[k]
    }

    /// `<Y, θ>` for every path.
    pub fn scores(&self, dag: &Dag) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| p.iter().map(|&e| dag.weight(e)).sum())
            .collect()
    }

    /// Node sequence of path `k`, starting at the source.
    pub fn nodes(&self, dag: &Dag, k: usize) -> Vec<usize> {
        let mut nodes = vec![0];
        nodes.extend(self.paths[k].iter().map(|&e| dag.child(e)));
        nodes
    }
}

/// All paths, refusing when there are more than [`DEFAULT_PATH_CAP`].
pub fn enumerate_paths(dag: &Dag) -> Result<PathSet> {
    enumerate_paths_capped(dag, DEFAULT_PATH_CAP)
}

/// All paths, refusing when there are more than `cap`. Children are visited in
/// ascending index order.
pub fn enumerate_paths_capped(dag: &Dag, cap: u64) -> Result<PathSet> {
    let count = dag.path_count();
    if count > cap as f64 {
        return Err(Error::PathCapExceeded { count, cap });
    }
    let sink = dag.n_nodes() - 1;
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(count as usize);
    let mut children: Vec<Vec<usize>> = (0..dag.n_nodes())
        .map(|j| dag.edges_out_of(j).to_vec())
        .collect();
    for list in &mut children {
        list.sort_by_key(|&e| dag.child(e));
    }
    // Stack of (node, index of next outgoing edge to try).
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    let mut path: Vec<usize> = Vec::new();
    while let Some(top) = stack.last_mut() {
        let (node, next) = *top;
        if node == sink {
            out.push(path.clone());
            stack.pop();
            path.pop();
            continue;
        }
        if next < children[node].len() {
            top.1 += 1;
            let e = children[node][next];
            path.push(e);
            stack.push((dag.child(e), 0));
        } else {
            stack.pop();
            path.pop();
        }
    }
    Ok(PathSet { paths: out })
}

/// `LPΩ(θ)`: one `maxΩ` over the vector of all path scores.
pub fn lp_omega_brute(paths: &PathSet, dag: &Dag, reg: &Regularizer) -> Result<f64> {
    max_omega(&paths.scores(dag), reg)
}

/// Probability of each path under the backward random walk driven by `q`.
pub fn path_probabilities(paths: &PathSet, transitions: &TransitionMatrix) -> Vec<f64> {
    paths
        .iter()
        .map(|p| {
            if p.len() > 64 {
                p.iter().map(|&e| transitions.get(e).ln()).sum::<f64>().exp()
            } else {
                p.iter().map(|&e| transitions.get(e)).product()
            }
        })
        .collect()
}

/// `Σ_Y p(Y) Y` and the total probability `Σ_Y p(Y)`.
pub fn expected_path_brute(
    paths: &PathSet,
    dag: &Dag,
    transitions: &TransitionMatrix,
) -> Result<(ExpectedPath, f64)> {
    check_edge_len(dag, transitions.as_slice().len())?;
    let probs = path_probabilities(paths, transitions);
    let mut edges = vec![0.0; dag.n_edges()];
    let mut nodes = vec![0.0; dag.n_nodes()];
    let mut total = 0.0;
    for (p, &prob) in paths.iter().zip(&probs) {
        total += prob;
        nodes[0] += prob;
        for &e in p {
            edges[e] += prob;
            nodes[dag.child(e)] += prob;
        }
    }
    Ok((ExpectedPath { edges, nodes }, total))
}

/// `γ log Σ_Y exp(<Y, θ> / γ)`.
pub fn log_partition_brute(paths: &PathSet, dag: &Dag, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidGamma(gamma));
    }
    let scores = paths.scores(dag);
    if scores.is_empty() {
        return Err(Error::EmptySupport);
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = scores.iter().map(|&x| ((x - m) / gamma).exp()).sum();
    Ok(m + gamma * s.ln())
}

/// Delannoy number `D(m, n)`: monotone lattice paths with unit right, up and
/// diagonal steps from `(0, 0)` to `(m, n)`.
pub fn delannoy(m: usize, n: usize) -> u64 {
    let mut table = vec![vec![1u64; n + 1]; m + 1];
    for i in 1..=m {
        for j in 1..=n {
            table[i][j] = table[i - 1][j] + table[i][j - 1] + table[i - 1][j - 1];
        }
    }
    table[m][n]
}
