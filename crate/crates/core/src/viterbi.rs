//! Smoothed Viterbi on the `T × S` trellis.
//!
//! Potentials are a `T × S × S` tensor where `θ[t, i, j]` scores state `i` at
//! time `t` following state `j` at time `t - 1`. The chain starts from a fixed
//! virtual state (the first state), so the time-0 slice must be constant in `j`
//! and only `θ[0, i, 0]` is read. Correspondingly the time-0 slice of every
//! gradient and Hessian product is concentrated on `j = 0`, and a sequence
//! `y` is represented by the 0/1 tensor with `y[0, y_0, 0] = 1` and
//! `y[t, y_t, y_{t-1}] = 1` for `t > 0`.
//!
//! The forward recursion is `v[t, i] = maxΩ_j(θ[t, i, j] + v[t-1, j])` and a
//! final `maxΩ` over `v[T-1]` plays the role of the end node. Each node at
//! `t = 0` has a single incoming edge (from the start), so `v[0, i]` is
//! `θ[0, i, 0]` shifted by the singleton offset of the regularizer. This makes
//! the result identical to [`crate::dag_dp`] on [`trellis_dag`].

use serde::{Deserialize, Serialize};

use crate::dag::Dag;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::smoothed_max::{jacobian_apply_into, value_grad_into, Regularizer};

/// Dense `T × S × S` tensor, row-major in `(t, i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    len: usize,
    states: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(len: usize, states: usize) -> Self {
        Self {
            len,
            states,
            data: vec![0.0; len * states * states],
        }
    }

    pub fn from_vec(len: usize, states: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * states * states {
            return Err(Error::ShapeMismatch {
                expected: format!("{len}x{states}x{states}"),
                got: format!("{} entries", data.len()),
            });
        }
        Ok(Self { len, states, data })
    }

    pub fn from_fn(len: usize, states: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(len * states * states);
        for t in 0..len {
            for i in 0..states {
                for j in 0..states {
                    data.push(f(t, i, j));
                }
            }
        }
        Self { len, states, data }
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of states `S`.
    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    fn idx(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.states + i) * self.states + j
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(t, i, j)]
    }

    pub fn set(&mut self, t: usize, i: usize, j: usize, v: f64) {
        let k = self.idx(t, i, j);
        self.data[k] = v;
    }

    /// The row `θ[t, i, ·]`.
    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let k = self.idx(t, i, 0);
        &self.data[k..k + self.states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor3) -> Result<()> {
        if self.len != other.len || self.states != other.states {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", self.len, self.states, self.states),
                got: format!("{}x{}x{}", other.len, other.states, other.states),
            });
        }
        Ok(())
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.len)
            .map(|t| (0..self.states).map(|i| self.row(t, i).to_vec()).collect())
            .collect()
    }
}

impl AsRef<[f64]> for Tensor3 {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

/// Edge marginals `e[t, i, j] = p(y_t = i, y_{t-1} = j)`.
pub type EdgeMarginals = Tensor3;

/// Validated potentials: `T, S ≥ 1`, finite, time-0 slice constant in `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTensor(Tensor3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PotentialDocument {
    #[serde(rename = "T")]
    len: usize,
    #[serde(rename = "S")]
    states: usize,
    theta: Vec<Vec<Vec<f64>>>,
}

impl PotentialTensor {
    pub fn new(theta: Tensor3) -> Result<Self> {
        if theta.len == 0 || theta.states == 0 {
            return Err(Error::InvalidPotentials(format!(
                "need T >= 1 and S >= 1, got T={} S={}",
                theta.len, theta.states
            )));
        }
        if let Some((index, &value)) = theta.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        for i in 0..theta.states {
            let row = theta.row(0, i);
            if row.iter().any(|&v| v != row[0]) {
                return Err(Error::InvalidPotentials(format!(
                    "time-1 potentials of state {} must not depend on the previous state",
                    i + 1
                )));
            }
        }
        Ok(Self(theta))
    }

    pub fn from_vec(len: usize, states: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor3::from_vec(len, states, data)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PotentialDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if doc.theta.len() != doc.len
            || doc
                .theta
                .iter()
                .any(|m| m.len() != doc.states || m.iter().any(|r| r.len() != doc.states))
        {
            return Err(Error::ShapeMismatch {
                expected: format!("theta of shape {}x{}x{}", doc.len, doc.states, doc.states),
                got: "a differently shaped nested array".to_string(),
            });
        }
        let data = doc.theta.into_iter().flatten().flatten().collect();
        Self::from_vec(doc.len, doc.states, data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PotentialDocument {
            len: self.0.len,
            states: self.0.states,
            theta: self.0.to_nested(),
        })
        .expect("potential document serializes")
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> usize {
        self.0.states
    }

    /// `θ + other`, keeping the validation.
    pub fn add(&self, other: &Tensor3) -> Result<Self> {
        self.0.check_same_shape(other)?;
        let data = self.0.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::from_vec(self.0.len, self.0.states, data)
    }

    /// `θ + step · dir`.
    pub fn perturbed(&self, dir: &Tensor3, step: f64) -> Result<Self> {
        self.0.check_same_shape(dir)?;
        let data = self.0.data.iter().zip(&dir.data).map(|(a, b)| a + step * b).collect();
        Self::from_vec(self.0.len, self.0.states, data)
    }

    /// Score `<Y, θ>` of a state sequence.
    pub fn sequence_score(&self, states: &[usize]) -> Result<f64> {
        check_sequence(states, self.len(), self.states())?;
        let mut s = self.0.get(0, states[0], 0);
        for t in 1..states.len() {
            s += self.0.get(t, states[t], states[t - 1]);
        }
        Ok(s)
    }
}

pub(crate) fn check_sequence(states: &[usize], len: usize, n_states: usize) -> Result<()> {
    if states.len() != len {
        return Err(Error::InvalidStructure(format!(
            "sequence has length {}, expected {len}",
            states.len()
        )));
    }
    if let Some(&s) = states.iter().find(|&&s| s >= n_states) {
        return Err(Error::InvalidStructure(format!(
            "state {} out of range for S={n_states}",
            s + 1
        )));
    }
    Ok(())
}

/// 0/1 tensor of a state sequence, with the virtual start state `0`.
pub fn sequence_indicator(states: &[usize], n_states: usize) -> Result<Tensor3> {
    check_sequence(states, states.len(), n_states)?;
    if states.is_empty() {
        return Err(Error::InvalidStructure("empty sequence".to_string()));
    }
    let mut y = Tensor3::zeros(states.len(), n_states);
    y.set(0, states[0], 0, 1.0);
    for t in 1..states.len() {
        y.set(t, states[t], states[t - 1], 1.0);
    }
    Ok(y)
}

/// Forward quantities kept for the Hessian pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiState {
    /// Local gradients `q[t, i, ·]`; the time-0 slice is the start indicator.
    pub q: Tensor3,
    /// Gradient of the final `maxΩ` over `v[T-1]`.
    pub q_end: Vec<f64>,
    /// Node marginals `u[t, i] = p(y_t = i)`.
    pub u: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiGrad {
    pub value: f64,
    pub marginals: EdgeMarginals,
    pub state: ViterbiState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiHessian {
    pub directional: f64,
    pub hessian: Tensor3,
}

/// `VitΩ(θ)` in `O(T S²)`.
pub fn viterbi_value(theta: &PotentialTensor, reg: &Regularizer) -> f64 {
    let th = theta.tensor();
    let (len, s) = (th.len, th.states);
    let offset = reg.singleton_offset();
    let mut prev: Vec<f64> = (0..s).map(|i| th.get(0, i, 0) + offset).collect();
    let mut cur = vec![0.0; s];
    let mut x = vec![0.0; s];
    let mut q = vec![0.0; s];
    for t in 1..len {
        for (i, slot) in cur.iter_mut().enumerate() {
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = th.get(t, i, j) + prev[j];
            }
            *slot = value_grad_into(&x, reg, &mut q);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    value_grad_into(&prev, reg, &mut q)
}

/// Value, edge marginals `∇VitΩ(θ)`, and the saved forward state.
pub fn viterbi_grad(theta: &PotentialTensor, reg: &Regularizer) -> ViterbiGrad {
    let th = theta.tensor();
    let (len, s) = (th.len, th.states);
    let offset = reg.singleton_offset();

    let mut v = Matrix::zeros(len, s);
    let mut q = Tensor3::zeros(len, s);
    for i in 0..s {
        v.set(0, i, th.get(0, i, 0) + offset);
        q.set(0, i, 0, 1.0);
    }
    let mut x = vec![0.0; s];
    for t in 1..len {
        for i in 0..s {
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = th.get(t, i, j) + v.get(t - 1, j);
            }
            let k = q.idx(t, i, 0);
            let val = value_grad_into(&x, reg, &mut q.data[k..k + s]);
            v.set(t, i, val);
        }
    }
    let mut q_end = vec![0.0; s];
    let value = value_grad_into(v.row(len - 1), reg, &mut q_end);

    let mut u = Matrix::zeros(len, s);
    for (i, &qe) in q_end.iter().enumerate() {
        u.set(len - 1, i, qe);
    }
    let mut e = Tensor3::zeros(len, s);
    for t in (1..len).rev() {
        for i in 0..s {
            let ui = u.get(t, i);
            for j in 0..s {
                let flow = ui * q.get(t, i, j);
                e.set(t, i, j, flow);
                let acc = u.get(t - 1, j) + flow;
                u.set(t - 1, j, acc);
            }
        }
    }
    for i in 0..s {
        e.set(0, i, 0, u.get(0, i));
    }
    ViterbiGrad {
        value,
        marginals: e,
        state: ViterbiState { q, q_end, u },
    }
}

/// `<∇VitΩ(θ), Z>` and `∇²VitΩ(θ) Z`.
pub fn viterbi_hessian_product(
    theta: &PotentialTensor,
    z: &Tensor3,
    reg: &Regularizer,
) -> Result<ViterbiHessian> {
    theta.tensor().check_same_shape(z)?;
    let grad = viterbi_grad(theta, reg);
    viterbi_hessian_product_with(theta, z, reg, &grad)
}

/// As [`viterbi_hessian_product`], reusing a gradient computed with the same `reg`.
pub fn viterbi_hessian_product_with(
    theta: &PotentialTensor,
    z: &Tensor3,
    reg: &Regularizer,
    grad: &ViterbiGrad,
) -> Result<ViterbiHessian> {
    theta.tensor().check_same_shape(z)?;
    let (len, s) = (theta.len(), theta.states());
    let ViterbiState { q, q_end, u } = &grad.state;

    let mut vdot = Matrix::zeros(len, s);
    for i in 0..s {
        vdot.set(0, i, z.get(0, i, 0));
    }
    let mut qdot = Tensor3::zeros(len, s);
    let mut w = vec![0.0; s];
    for t in 1..len {
        for i in 0..s {
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = z.get(t, i, j) + vdot.get(t - 1, j);
            }
            let qi = q.row(t, i);
            let d: f64 = qi.iter().zip(&w).map(|(a, b)| a * b).sum();
            vdot.set(t, i, d);
            let k = qdot.idx(t, i, 0);
            jacobian_apply_into(qi, &w, reg, &mut qdot.data[k..k + s]);
        }
    }
    let last = vdot.row(len - 1).to_vec();
    let directional: f64 = q_end.iter().zip(&last).map(|(a, b)| a * b).sum();
    let mut qdot_end = vec![0.0; s];
    jacobian_apply_into(q_end, &last, reg, &mut qdot_end);

    let mut udot = Matrix::zeros(len, s);
    for (i, &d) in qdot_end.iter().enumerate() {
        udot.set(len - 1, i, d);
    }
    let mut edot = Tensor3::zeros(len, s);
    for t in (1..len).rev() {
        for i in 0..s {
            let (ui, udi) = (u.get(t, i), udot.get(t, i));
            for j in 0..s {
                let d = qdot.get(t, i, j) * ui + q.get(t, i, j) * udi;
                edot.set(t, i, j, d);
                let acc = udot.get(t - 1, j) + d;
                udot.set(t - 1, j, acc);
            }
        }
    }
    for i in 0..s {
        edot.set(0, i, 0, udot.get(0, i));
    }
    Ok(ViterbiHessian {
        directional,
        hessian: edot,
    })
}

/// `p[t, i] = Σ_j e[t, i, j]`.
pub fn state_marginals(e: &EdgeMarginals) -> Matrix {
    let mut p = Matrix::zeros(e.len, e.states);
    for t in 0..e.len {
        for i in 0..e.states {
            p.set(t, i, e.row(t, i).iter().sum());
        }
    }
    p
}

/// `θ[t, i, j] = <w_i, x_t> + b_i + trans[i, j]` for `t > 0`, without the
/// transition term at `t = 0`.
pub fn linear_potentials(
    x: &Matrix,
    w: &Matrix,
    b: &[f64],
    trans: &Matrix,
) -> Result<PotentialTensor> {
    let s = w.rows();
    if w.cols() != x.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("W with {} columns", x.cols()),
            got: format!("{} columns", w.cols()),
        });
    }
    if b.len() != s {
        return Err(Error::LengthMismatch {
            expected: s,
            got: b.len(),
        });
    }
    trans.check_shape(s, s)?;
    let len = x.rows();
    let mut unary = Matrix::zeros(len, s);
    for t in 0..len {
        for i in 0..s {
            let score: f64 = w.row(i).iter().zip(x.row(t)).map(|(a, c)| a * c).sum();
            unary.set(t, i, score + b[i]);
        }
    }
    let theta = Tensor3::from_fn(len, s, |t, i, j| {
        if t == 0 {
            unary.get(0, i)
        } else {
            unary.get(t, i) + trans.get(i, j)
        }
    });
    PotentialTensor::new(theta)
}

/// Unregularized Viterbi decoding; ties go to the lowest state index.
#[derive(Debug, Clone, PartialEq)]
pub struct HardDecoding {
    pub value: f64,
    pub states: Vec<usize>,
    /// Number of maximizing sequences (relative tolerance `1e-9`).
    pub optimal_count: f64,
}

pub fn hard_viterbi(theta: &PotentialTensor) -> HardDecoding {
    let th = theta.tensor();
    let (len, s) = (th.len, th.states);
    let mut v = Matrix::zeros(len, s);
    let mut count = Matrix::zeros(len, s);
    let mut back = vec![0usize; len * s];
    for i in 0..s {
        v.set(0, i, th.get(0, i, 0));
        count.set(0, i, 1.0);
    }
    for t in 1..len {
        for i in 0..s {
            let mut m = f64::NEG_INFINITY;
            let mut arg = 0;
            for j in 0..s {
                let x = th.get(t, i, j) + v.get(t - 1, j);
                if x > m {
                    m = x;
                    arg = j;
                }
            }
            let tol = 1e-9 * m.abs().max(1.0);
            let c: f64 = (0..s)
                .filter(|&j| th.get(t, i, j) + v.get(t - 1, j) >= m - tol)
                .map(|j| count.get(t - 1, j))
                .sum();
            v.set(t, i, m);
            count.set(t, i, c);
            back[t * s + i] = arg;
        }
    }
    let last = v.row(len - 1);
    let mut arg = 0;
    for i in 1..s {
        if last[i] > last[arg] {
            arg = i;
        }
    }
    let m = last[arg];
    let tol = 1e-9 * m.abs().max(1.0);
    let optimal_count = (0..s)
        .filter(|&i| last[i] >= m - tol)
        .map(|i| count.get(len - 1, i))
        .sum();
    let mut states = vec![0; len];
    states[len - 1] = arg;
    for t in (1..len).rev() {
        states[t - 1] = back[t * s + states[t]];
    }
    HardDecoding {
        value: m,
        states,
        optimal_count,
    }
}

/// The trellis as an explicit DAG: a start node, `T·S` state nodes in time
/// order, and an end node reached through zero-weight edges.
pub fn trellis_dag(theta: &PotentialTensor) -> Dag {
    let th = theta.tensor();
    let (len, s) = (th.len, th.states);
    let node = |t: usize, i: usize| 1 + t * s + i;
    let end = len * s + 1;
    let mut edges = Vec::with_capacity((len.saturating_sub(1)) * s * s + 2 * s);
    for i in 0..s {
        edges.push((node(0, i), 0, th.get(0, i, 0)));
    }
    for t in 1..len {
        for i in 0..s {
            for j in 0..s {
                edges.push((node(t, i), node(t - 1, j), th.get(t, i, j)));
            }
        }
    }
    for i in 0..s {
        edges.push((end, node(len - 1, i), 0.0));
    }
    Dag::new(end + 1, edges).expect("trellis is a valid DAG")
}

/// Maps an edge-indexed vector on [`trellis_dag`] back to the tensor layout,
/// dropping the end edges.
pub fn trellis_edges_to_tensor(theta: &PotentialTensor, dag: &Dag, values: &[f64]) -> Tensor3 {
    let s = theta.states();
    let mut out = Tensor3::zeros(theta.len(), s);
    let end = dag.n_nodes() - 1;
    for (e, &val) in values.iter().enumerate() {
        let (c, p) = (dag.child(e), dag.parent(e));
        if c == end {
            continue;
        }
        let (t, i) = ((c - 1) / s, (c - 1) % s);
        let j = if p == 0 { 0 } else { (p - 1) % s };
        out.set(t, i, j, val);
    }
    out
}
