//! Smoothed dynamic programming over a [`Dag`].
//!
//! The smoothed value replaces the max of the Bellman recursion by `maxΩ`:
//!
//! ```text
//! v_0 = 0,   v_i = maxΩ_{j ∈ parents(i)} (θ_ij + v_j),   DPΩ(θ) = v_{n-1}
//! ```
//!
//! Its gradient `E = ∇DPΩ(θ)` is the expected path under the backward random
//! walk whose transition probabilities are the local gradients `q_i`. It is
//! obtained by one reverse sweep. Directional derivatives and Hessian-vector
//! products reuse the stored `q_i` and cost one more forward and reverse sweep.

use crate::dag::{check_edge_len, Dag};
use crate::error::{Error, Result};
use crate::smoothed_max::{jacobian_apply_into, value_grad_into, RegKind, Regularizer};

/// `∇DPΩ(θ)`: edge marginals plus node marginals `ē`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedPath {
    pub edges: Vec<f64>,
    pub nodes: Vec<f64>,
}

/// Edge-indexed local gradients `q_ij`; for each node the entries over its
/// incoming edges form a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    q: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(dag: &Dag, q: Vec<f64>) -> Result<Self> {
        check_edge_len(dag, q.len())?;
        for i in 1..dag.n_nodes() {
            let row = &q[dag.edges_into(i)];
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| v.is_nan() || v < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "transition weights into node {} are not a probability vector",
                    i + 1
                )));
            }
        }
        Ok(Self { q })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.q[edge]
    }

    /// Edges with non-zero transition probability.
    pub fn support(&self) -> Vec<bool> {
        self.q.iter().map(|&v| v > 0.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpGrad {
    pub value: f64,
    pub expected: ExpectedPath,
    pub transitions: TransitionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianProduct {
    /// `<∇DPΩ(θ), Z>`.
    pub directional: f64,
    /// `∇²DPΩ(θ) Z`, edge-indexed.
    pub edges: Vec<f64>,
}

/// Highest-scoring path found by the hard max recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct HardPath {
    pub value: f64,
    /// Edge ids from source to sink.
    pub edges: Vec<usize>,
}

impl HardPath {
    /// 0/1 edge-indexed indicator of the path.
    pub fn indicator(&self, dag: &Dag) -> Vec<f64> {
        edge_indicator(dag, &self.edges)
    }

    /// Node sequence from source to sink.
    pub fn nodes(&self, dag: &Dag) -> Vec<usize> {
        let mut nodes = vec![0];
        nodes.extend(self.edges.iter().map(|&e| dag.child(e)));
        nodes
    }
}

pub fn edge_indicator(dag: &Dag, edges: &[usize]) -> Vec<f64> {
    let mut y = vec![0.0; dag.n_edges()];
    for &e in edges {
        y[e] = 1.0;
    }
    y
}

/// `LP(θ)` and one maximizing path. Ties go to the lowest parent index.
pub fn hard_value_and_path(dag: &Dag) -> HardPath {
    let n = dag.n_nodes();
    let mut v = vec![0.0; n];
    let mut best = vec![usize::MAX; n];
    for i in 1..n {
        let mut arg = usize::MAX;
        let mut m = f64::NEG_INFINITY;
        for e in dag.edges_into(i) {
            let s = dag.weight(e) + v[dag.parent(e)];
            if s > m {
                m = s;
                arg = e;
            }
        }
        v[i] = m;
        best[i] = arg;
    }
    let mut edges = Vec::new();
    let mut node = n - 1;
    while node != 0 {
        let e = best[node];
        edges.push(e);
        node = dag.parent(e);
    }
    edges.reverse();
    HardPath {
        value: v[n - 1],
        edges,
    }
}

/// Number of maximizing paths, counting scores within a relative `1e-9` of the
/// max as tied.
pub fn optimal_path_count(dag: &Dag) -> f64 {
    let n = dag.n_nodes();
    let mut v = vec![0.0; n];
    let mut count = vec![0.0f64; n];
    count[0] = 1.0;
    for i in 1..n {
        let m = dag
            .edges_into(i)
            .map(|e| dag.weight(e) + v[dag.parent(e)])
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * m.abs().max(1.0);
        v[i] = m;
        count[i] = dag
            .edges_into(i)
            .filter(|&e| dag.weight(e) + v[dag.parent(e)] >= m - tol)
            .map(|e| count[dag.parent(e)])
            .sum();
    }
    count[n - 1]
}

struct Forward {
    values: Vec<f64>,
    q: Vec<f64>,
}

fn forward(dag: &Dag, reg: &Regularizer) -> Forward {
    let n = dag.n_nodes();
    let mut values = vec![0.0; n];
    let mut q = vec![0.0; dag.n_edges()];
    let mut x = Vec::new();
    for i in 1..n {
        let range = dag.edges_into(i);
        x.clear();
        x.extend(range.clone().map(|e| dag.weight(e) + values[dag.parent(e)]));
        values[i] = value_grad_into(&x, reg, &mut q[range]);
    }
    Forward { values, q }
}

/// `DPΩ(θ)`, computed in a single topological sweep.
pub fn dp_value(dag: &Dag, reg: &Regularizer) -> f64 {
    let n = dag.n_nodes();
    let mut values = vec![0.0; n];
    let mut x = Vec::new();
    let mut q = Vec::new();
    for i in 1..n {
        let range = dag.edges_into(i);
        x.clear();
        x.extend(range.clone().map(|e| dag.weight(e) + values[dag.parent(e)]));
        q.resize(x.len(), 0.0);
        values[i] = value_grad_into(&x, reg, &mut q);
    }
    values[n - 1]
}

/// Value, expected path and transition matrix.
pub fn dp_grad(dag: &Dag, reg: &Regularizer) -> DpGrad {
    let Forward { values, q } = forward(dag, reg);
    let n = dag.n_nodes();
    let mut nodes = vec![0.0; n];
    let mut edges = vec![0.0; dag.n_edges()];
    nodes[n - 1] = 1.0;
    // Node i is final once every child (all > i) has pushed its mass back.
    for i in (1..n).rev() {
        let mass = nodes[i];
        for e in dag.edges_into(i) {
            let flow = q[e] * mass;
            edges[e] = flow;
            nodes[dag.parent(e)] += flow;
        }
    }
    DpGrad {
        value: values[n - 1],
        expected: ExpectedPath { edges, nodes },
        transitions: TransitionMatrix { q },
    }
}

fn directional_sweep(dag: &Dag, z: &[f64], q: &[f64]) -> Vec<f64> {
    let mut vdot = vec![0.0; dag.n_nodes()];
    for i in 1..dag.n_nodes() {
        vdot[i] = dag
            .edges_into(i)
            .map(|e| q[e] * (z[e] + vdot[dag.parent(e)]))
            .sum();
    }
    vdot
}

/// `<∇DPΩ(θ), Z>` from the transition matrix of a previous [`dp_grad`] call.
pub fn dp_directional(dag: &Dag, z: &[f64], transitions: &TransitionMatrix) -> Result<f64> {
    check_edge_len(dag, z.len())?;
    check_edge_len(dag, transitions.q.len())?;
    let vdot = directional_sweep(dag, z, &transitions.q);
    Ok(vdot[dag.n_nodes() - 1])
}

/// `∇²DPΩ(θ) Z` together with the directional derivative.
pub fn dp_hessian_product(dag: &Dag, z: &[f64], reg: &Regularizer) -> Result<HessianProduct> {
    check_edge_len(dag, z.len())?;
    let grad = dp_grad(dag, reg);
    dp_hessian_product_with(dag, z, reg, &grad)
}

/// As [`dp_hessian_product`], reusing a gradient computed with the same `reg`.
pub fn dp_hessian_product_with(
    dag: &Dag,
    z: &[f64],
    reg: &Regularizer,
    grad: &DpGrad,
) -> Result<HessianProduct> {
    check_edge_len(dag, z.len())?;
    let n = dag.n_nodes();
    let q = grad.transitions.as_slice();
    let ebar = &grad.expected.nodes;

    let mut vdot = vec![0.0; n];
    let mut qdot = vec![0.0; dag.n_edges()];
    let mut w = Vec::new();
    for i in 1..n {
        let range = dag.edges_into(i);
        w.clear();
        w.extend(range.clone().map(|e| z[e] + vdot[dag.parent(e)]));
        vdot[i] = range.clone().zip(&w).map(|(e, wk)| q[e] * wk).sum();
        jacobian_apply_into(&q[range.clone()], &w, reg, &mut qdot[range]);
    }

    let mut ebar_dot = vec![0.0; n];
    let mut edot = vec![0.0; dag.n_edges()];
    for i in (1..n).rev() {
        for e in dag.edges_into(i) {
            let d = qdot[e] * ebar[i] + q[e] * ebar_dot[i];
            edot[e] = d;
            ebar_dot[dag.parent(e)] += d;
        }
    }
    Ok(HessianProduct {
        directional: vdot[n - 1],
        edges: edot,
    })
}

/// Gradients along a decreasing temperature schedule and their rounded limit.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationLimit {
    pub gradients: Vec<Vec<f64>>,
    /// Rounded gradient at the last temperature (entries ≥ 0.5 become 1).
    pub limit: Vec<f64>,
    /// Indicator of the hard maximizing path.
    pub hard_path: Vec<f64>,
}

impl RegularizationLimit {
    pub fn converged(&self) -> bool {
        self.limit == self.hard_path
    }
}

/// Runs [`dp_grad`] for each `γ` of the schedule and rounds the last gradient.
///
/// Fails with [`Error::NonUniqueArgmax`] when the hard maximizer is not unique.
pub fn vanishing_regularization_limit(
    dag: &Dag,
    kind: RegKind,
    gammas: &[f64],
) -> Result<RegularizationLimit> {
    if gammas.is_empty() {
        return Err(Error::Domain("empty temperature schedule".to_string()));
    }
    let count = optimal_path_count(dag);
    if count > 1.0 {
        return Err(Error::NonUniqueArgmax { count });
    }
    let hard_path = hard_value_and_path(dag).indicator(dag);
    let mut gradients = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let reg = Regularizer::new(kind, g)?;
        gradients.push(dp_grad(dag, &reg).expected.edges);
    }
    let limit = round_indicator(gradients.last().expect("non-empty schedule"));
    Ok(RegularizationLimit {
        gradients,
        limit,
        hard_path,
    })
}

pub(crate) fn round_indicator(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect()
}
