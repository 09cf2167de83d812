//! Smoothed dynamic time warping.
//!
//! `v[i, j] = θ[i, j] + minΩ(v[i, j-1], v[i-1, j-1], v[i-1, j])` with
//! `minΩ(x) = -maxΩ(-x)`. Border cells only see their feasible predecessors;
//! cell `(0, 0)` sees a single virtual predecessor of value 0, so under squared
//! ℓ2 it picks up the singleton offset `+γ/2` like every other one-way cell.
//!
//! Predecessor slots are always ordered `[left, diagonal, up]`.

use crate::dag::Dag;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::oracle::enumerate_paths_capped;
use crate::smoothed_max::{jacobian_apply_into, value_grad_into, Regularizer, SimplexVector};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

const LEFT: usize = 0;
const DIAG: usize = 1;
const UP: usize = 2;

/// Pairwise discrepancies `θ[i, j] = d(a_i, b_j)`; finite, at least `1 × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::ShapeMismatch {
                expected: "at least 1x1".to_string(),
                got: format!("{}x{}", m.rows(), m.cols()),
            });
        }
        if let Some((index, &value)) = m.as_slice().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn perturbed(&self, dir: &Matrix, step: f64) -> Result<Self> {
        dir.check_shape(self.0.rows(), self.0.cols())?;
        let data = self.0.as_slice().iter().zip(dir.as_slice()).map(|(a, b)| a + step * b).collect();
        Self::new(Matrix::from_vec(self.0.rows(), self.0.cols(), data)?)
    }
}

/// `E = ∇DTWΩ(θ)`, the expected alignment.
pub type SoftAlignment = Matrix;

/// `(-maxΩ(-x), ∇maxΩ(-x))`. The Hessian is `-J_Ω` at the returned gradient.
pub fn min_omega(x: &[f64], reg: &Regularizer) -> Result<(f64, SimplexVector)> {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let (v, q) = crate::smoothed_max::max_omega_with_grad(&neg, reg)?;
    Ok((-v, q))
}

#[inline]
fn preds(i: usize, j: usize) -> [bool; 3] {
    [j > 0, i > 0 && j > 0, i > 0]
}

#[inline]
fn pred_cell(k: usize, i: usize, j: usize) -> (usize, usize) {
    match k {
        LEFT => (i, j - 1),
        DIAG => (i - 1, j - 1),
        _ => (i - 1, j),
    }
}

/// Forward quantities kept for the Hessian pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwState {
    pub values: Matrix,
    /// `q[i * n_b + j]` over `[left, diagonal, up]`, zero on infeasible slots.
    pub q: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwGrad {
    pub value: f64,
    pub alignment: SoftAlignment,
    pub state: DtwState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwHessian {
    pub directional: f64,
    pub hessian: Matrix,
}

struct Scratch {
    x: Vec<f64>,
    q: Vec<f64>,
}

/// `minΩ` over the feasible predecessors; writes the weights into `slots`.
fn cell_min(values: &Matrix, i: usize, j: usize, reg: &Regularizer, s: &mut Scratch, slots: &mut [f64; 3]) -> f64 {
    *slots = [0.0; 3];
    if i == 0 && j == 0 {
        return -reg.singleton_offset();
    }
    let active = preds(i, j);
    s.x.clear();
    for k in 0..3 {
        if active[k] {
            let (pi, pj) = pred_cell(k, i, j);
            s.x.push(-values.get(pi, pj));
        }
    }
    s.q.resize(s.x.len(), 0.0);
    let v = -value_grad_into(&s.x, reg, &mut s.q);
    let mut it = s.q.iter();
    for k in 0..3 {
        if active[k] {
            slots[k] = *it.next().expect("one weight per active slot");
        }
    }
    v
}

fn forward(theta: &CostMatrix, reg: &Regularizer) -> DtwState {
    let (na, nb) = theta.shape();
    let th = theta.matrix();
    let mut values = Matrix::zeros(na, nb);
    let mut q = vec![[0.0; 3]; na * nb];
    let mut s = Scratch {
        x: Vec::with_capacity(3),
        q: Vec::with_capacity(3),
    };
    for i in 0..na {
        for j in 0..nb {
            let m = cell_min(&values, i, j, reg, &mut s, &mut q[i * nb + j]);
            values.set(i, j, th.get(i, j) + m);
        }
    }
    DtwState { values, q }
}

/// `DTWΩ(θ)` in `O(N_A N_B)`.
pub fn dtw_value(theta: &CostMatrix, reg: &Regularizer) -> f64 {
    let (na, nb) = theta.shape();
    forward(theta, reg).values.get(na - 1, nb - 1)
}

/// Value, expected alignment and saved forward state.
pub fn dtw_grad(theta: &CostMatrix, reg: &Regularizer) -> DtwGrad {
    let (na, nb) = theta.shape();
    let state = forward(theta, reg);
    let mut e = Matrix::zeros(na, nb);
    e.set(na - 1, nb - 1, 1.0);
    // Reverse row-major order visits every successor before its predecessors.
    for i in (0..na).rev() {
        for j in (0..nb).rev() {
            let mass = e.get(i, j);
            let qc = &state.q[i * nb + j];
            let active = preds(i, j);
            for k in 0..3 {
                if active[k] {
                    let (pi, pj) = pred_cell(k, i, j);
                    let acc = e.get(pi, pj) + qc[k] * mass;
                    e.set(pi, pj, acc);
                }
            }
        }
    }
    DtwGrad {
        value: state.values.get(na - 1, nb - 1),
        alignment: e,
        state,
    }
}

/// `<∇DTWΩ(θ), Z>` and `∇²DTWΩ(θ) Z`.
pub fn dtw_hessian_product(theta: &CostMatrix, z: &Matrix, reg: &Regularizer) -> Result<DtwHessian> {
    let (na, nb) = theta.shape();
    z.check_shape(na, nb)?;
    let grad = dtw_grad(theta, reg);
    dtw_hessian_product_with(theta, z, reg, &grad)
}

/// As [`dtw_hessian_product`], reusing a gradient computed with the same `reg`.
pub fn dtw_hessian_product_with(
    theta: &CostMatrix,
    z: &Matrix,
    reg: &Regularizer,
    grad: &DtwGrad,
) -> Result<DtwHessian> {
    let (na, nb) = theta.shape();
    z.check_shape(na, nb)?;
    let q = &grad.state.q;
    let e = &grad.alignment;

    let mut vdot = Matrix::zeros(na, nb);
    let mut qdot = vec![[0.0; 3]; na * nb];
    let mut w = Vec::with_capacity(3);
    let mut qa = Vec::with_capacity(3);
    let mut out = Vec::with_capacity(3);
    for i in 0..na {
        for j in 0..nb {
            let active = preds(i, j);
            let qc = &q[i * nb + j];
            w.clear();
            qa.clear();
            let mut d = z.get(i, j);
            for k in 0..3 {
                if active[k] {
                    let (pi, pj) = pred_cell(k, i, j);
                    let vd = vdot.get(pi, pj);
                    d += qc[k] * vd;
                    w.push(vd);
                    qa.push(qc[k]);
                }
            }
            vdot.set(i, j, d);
            if w.len() > 1 {
                out.resize(w.len(), 0.0);
                jacobian_apply_into(&qa, &w, reg, &mut out);
                let mut it = out.iter();
                for k in 0..3 {
                    if active[k] {
                        qdot[i * nb + j][k] = -*it.next().expect("one entry per active slot");
                    }
                }
            }
        }
    }

    let mut edot = Matrix::zeros(na, nb);
    for i in (0..na).rev() {
        for j in (0..nb).rev() {
            let (mass, dmass) = (e.get(i, j), edot.get(i, j));
            let active = preds(i, j);
            for k in 0..3 {
                if active[k] {
                    let (pi, pj) = pred_cell(k, i, j);
                    let d = qdot[i * nb + j][k] * mass + q[i * nb + j][k] * dmass;
                    let acc = edot.get(pi, pj) + d;
                    edot.set(pi, pj, acc);
                }
            }
        }
    }
    Ok(DtwHessian {
        directional: vdot.get(na - 1, nb - 1),
        hessian: edot,
    })
}

/// Classic DTW with backtracking. Ties prefer the diagonal, then left, then up.
pub fn hard_dtw(theta: &CostMatrix) -> (f64, Matrix) {
    let (na, nb) = theta.shape();
    let th = theta.matrix();
    let mut v = Matrix::zeros(na, nb);
    let mut back = vec![usize::MAX; na * nb];
    for i in 0..na {
        for j in 0..nb {
            if i == 0 && j == 0 {
                v.set(0, 0, th.get(0, 0));
                continue;
            }
            let active = preds(i, j);
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for k in [DIAG, LEFT, UP] {
                if active[k] {
                    let (pi, pj) = pred_cell(k, i, j);
                    let x = v.get(pi, pj);
                    if x < best {
                        best = x;
                        arg = k;
                    }
                }
            }
            v.set(i, j, th.get(i, j) + best);
            back[i * nb + j] = arg;
        }
    }
    let mut y = Matrix::zeros(na, nb);
    let (mut i, mut j) = (na - 1, nb - 1);
    loop {
        y.set(i, j, 1.0);
        if i == 0 && j == 0 {
            break;
        }
        (i, j) = pred_cell(back[i * nb + j], i, j);
    }
    (v.get(na - 1, nb - 1), y)
}

/// `θ[i, j] = ‖a_i - b_j‖²` for time series stored one observation per row.
pub fn squared_euclidean_costs(a: &Matrix, b: &Matrix) -> Result<CostMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("series with {} columns", a.cols()),
            got: format!("{} columns", b.cols()),
        });
    }
    let mut m = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let d = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            m.set(i, j, d);
        }
    }
    CostMatrix::new(m)
}

/// Node index of cell `(i, j)` in [`export_dag`].
pub fn cell_node(n_b: usize, i: usize, j: usize) -> usize {
    1 + i * n_b + j
}

/// The DTW lattice as a DAG whose max-recursion is the negated min-recursion.
///
/// Node 0 is the start, cell `(i, j)` is node `1 + i·N_B + j`. Every edge into a
/// cell carries `-θ[i, j]`, so `dp_value(export_dag(θ)) = -dtw_value(θ)` and the
/// node marginals of `dp_grad` are the soft alignment.
pub fn export_dag(theta: &CostMatrix) -> Result<Dag> {
    export_dag_capped(theta, DEFAULT_NODE_CAP)
}

pub fn export_dag_capped(theta: &CostMatrix, node_cap: usize) -> Result<Dag> {
    let (na, nb) = theta.shape();
    let n_nodes = na * nb + 1;
    if n_nodes > node_cap {
        return Err(Error::Domain(format!(
            "lattice needs {n_nodes} nodes, above the cap of {node_cap}"
        )));
    }
    let th = theta.matrix();
    let mut edges = Vec::with_capacity(3 * na * nb);
    edges.push((cell_node(nb, 0, 0), 0, -th.get(0, 0)));
    for i in 0..na {
        for j in 0..nb {
            let active = preds(i, j);
            for k in 0..3 {
                if active[k] {
                    let (pi, pj) = pred_cell(k, i, j);
                    edges.push((cell_node(nb, i, j), cell_node(nb, pi, pj), -th.get(i, j)));
                }
            }
        }
    }
    Dag::new(n_nodes, edges)
}

/// 0/1 alignment matrix of a path (edge ids) through [`export_dag`].
pub fn alignment_from_path(dag: &Dag, n_a: usize, n_b: usize, path: &[usize]) -> Matrix {
    let mut y = Matrix::zeros(n_a, n_b);
    for &e in path {
        let c = dag.child(e) - 1;
        y.set(c / n_b, c % n_b, 1.0);
    }
    y
}

/// Every monotone alignment of an `n_a × n_b` lattice.
pub fn enumerate_alignments(n_a: usize, n_b: usize, cap: u64) -> Result<Vec<Matrix>> {
    let theta = CostMatrix::new(Matrix::zeros(n_a, n_b))?;
    let dag = export_dag(&theta)?;
    let paths = enumerate_paths_capped(&dag, cap)?;
    Ok(paths.iter().map(|p| alignment_from_path(&dag, n_a, n_b, p)).collect())
}

/// Checks that `y` is a monotone alignment from `(0, 0)` to the last cell.
pub fn check_alignment(y: &Matrix) -> Result<()> {
    let (na, nb) = y.shape();
    if na == 0 || nb == 0 {
        return Err(Error::InvalidStructure("empty alignment".to_string()));
    }
    if y.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidStructure("alignment entries must be 0 or 1".to_string()));
    }
    let (mut i, mut j) = (0, 0);
    if y.get(0, 0) != 1.0 {
        return Err(Error::InvalidStructure("alignment must start at (1, 1)".to_string()));
    }
    let mut visited = 1usize;
    while (i, j) != (na - 1, nb - 1) {
        let right = j + 1 < nb && y.get(i, j + 1) == 1.0;
        let down = i + 1 < na && y.get(i + 1, j) == 1.0;
        let diag = i + 1 < na && j + 1 < nb && y.get(i + 1, j + 1) == 1.0;
        (i, j) = match (right, down, diag) {
            (true, false, _) => (i, j + 1),
            (false, true, _) => (i + 1, j),
            (false, false, true) => (i + 1, j + 1),
            _ => {
                return Err(Error::InvalidStructure(format!(
                    "alignment is not a monotone path at cell ({}, {})",
                    i + 1,
                    j + 1
                )))
            }
        };
        visited += 1;
    }
    if visited != y.count_nonzero(0.0) {
        return Err(Error::InvalidStructure(
            "alignment has cells outside its path".to_string(),
        ));
    }
    Ok(())
}
