//! Finite-difference and brute-force checks of the DP engines.
//!
//! Gradients are compared coordinate-wise against central differences and
//! Hessian-vector products against central differences of the gradient.
//! Squared-ℓ2 values are piecewise quadratic, so a draw only counts when every
//! local simplex projection keeps its support under the perturbations.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dag::Dag;
use crate::dag_dp::{dp_grad, dp_hessian_product_with, dp_value};
use crate::dtw::{
    cell_node, dtw_grad, dtw_hessian_product_with, dtw_value, enumerate_alignments, export_dag, CostMatrix,
};
use crate::error::{Error, Result};
use crate::instances::{random_costs, random_potential_direction, random_potentials, random_small_dag, random_vec};
use crate::matrix::Matrix;
use crate::oracle::{enumerate_paths, expected_path_brute, log_partition_brute};
use crate::smoothed_max::{RegKind, Regularizer};
use crate::viterbi::{
    trellis_dag, trellis_edges_to_tensor, viterbi_grad, viterbi_hessian_product_with, viterbi_value,
    PotentialTensor, Tensor3,
};

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;
pub const HESS_TOL: f64 = 1e-3;
pub const VALUE_TOL: f64 = 1e-9;
pub const EXPECTATION_TOL: f64 = 1e-10;
/// Share of squared-ℓ2 draws that must be support-stable.
pub const MIN_STABLE_SHARE: f64 = 0.8;

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or 0 when both norms are below `1e-10`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale <= 1e-10 {
        return 0.0;
    }
    norm(&diff) / scale
}

/// Largest absolute entry-wise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative errors of one finite-difference draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOutcome {
    pub grad_err: f64,
    pub hess_err: f64,
}

/// Value, flattened gradient and support signature at a parameter vector.
struct Eval {
    value: f64,
    grad: Vec<f64>,
    support: Vec<bool>,
}

fn shifted(theta: &[f64], dir: &[f64], step: f64) -> Vec<f64> {
    theta.iter().zip(dir).map(|(t, d)| t + step * d).collect()
}

/// Core of the three checks. `None` when a squared-ℓ2 support moved.
fn fd_check(
    theta: &[f64],
    basis: &[Vec<f64>],
    z: &[f64],
    hvp: &[f64],
    check_support: bool,
    eval: impl Fn(&[f64]) -> Eval,
) -> Option<FdOutcome> {
    let base = eval(theta);
    let mut an = Vec::with_capacity(basis.len());
    let mut fd = Vec::with_capacity(basis.len());
    for b in basis {
        let p = eval(&shifted(theta, b, FD_STEP));
        let m = eval(&shifted(theta, b, -FD_STEP));
        if check_support && (p.support != base.support || m.support != base.support) {
            return None;
        }
        fd.push((p.value - m.value) / (2.0 * FD_STEP));
        an.push(b.iter().zip(&base.grad).map(|(x, y)| x * y).sum());
    }
    let p = eval(&shifted(theta, z, FD_STEP));
    let m = eval(&shifted(theta, z, -FD_STEP));
    if check_support && (p.support != base.support || m.support != base.support) {
        return None;
    }
    let fd_h: Vec<f64> = p.grad.iter().zip(&m.grad).map(|(a, b)| (a - b) / (2.0 * FD_STEP)).collect();
    Some(FdOutcome {
        grad_err: relative_error(&an, &fd),
        hess_err: relative_error(hvp, &fd_h),
    })
}

fn unit_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let mut v = vec![0.0; n];
            v[k] = 1.0;
            v
        })
        .collect()
}

fn positive(v: &[f64]) -> impl Iterator<Item = bool> + '_ {
    v.iter().map(|&x| x > 0.0)
}

/// Finite-difference check of `dp_grad` and `dp_hessian_product` along `z`.
pub fn check_dag(dag: &Dag, z: &[f64], reg: &Regularizer) -> Result<Option<FdOutcome>> {
    let g = dp_grad(dag, reg);
    let h = dp_hessian_product_with(dag, z, reg, &g)?;
    let eval = |w: &[f64]| {
        let d = dag.with_weights(w.to_vec()).expect("same edge count");
        let g = dp_grad(&d, reg);
        Eval {
            value: g.value,
            support: g.transitions.support(),
            grad: g.expected.edges,
        }
    };
    let l2 = reg.kind() == RegKind::SquaredL2;
    Ok(fd_check(dag.weights(), &unit_basis(dag.n_edges()), z, &h.edges, l2, eval))
}

/// Directions that move one free potential; the time-0 entries of a state
/// move together.
fn potential_basis(len: usize, s: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in 0..len {
        for i in 0..s {
            if t == 0 {
                let d = Tensor3::from_fn(len, s, |u, k, _| f64::from(u8::from(u == 0 && k == i)));
                out.push(d.as_slice().to_vec());
                continue;
            }
            for j in 0..s {
                let d = Tensor3::from_fn(len, s, |u, k, l| f64::from(u8::from(u == t && k == i && l == j)));
                out.push(d.as_slice().to_vec());
            }
        }
    }
    out
}

/// Finite-difference check of `viterbi_grad` and `viterbi_hessian_product`.
pub fn check_viterbi(theta: &PotentialTensor, z: &Tensor3, reg: &Regularizer) -> Result<Option<FdOutcome>> {
    let (len, s) = (theta.len(), theta.states());
    let g = viterbi_grad(theta, reg);
    let h = viterbi_hessian_product_with(theta, z, reg, &g)?;
    let eval = |w: &[f64]| {
        let p = PotentialTensor::from_vec(len, s, w.to_vec()).expect("direction keeps potentials valid");
        let g = viterbi_grad(&p, reg);
        Eval {
            value: g.value,
            support: positive(g.state.q.as_slice()).chain(positive(&g.state.q_end)).collect(),
            grad: g.marginals.as_slice().to_vec(),
        }
    };
    let l2 = reg.kind() == RegKind::SquaredL2;
    Ok(fd_check(
        theta.tensor().as_slice(),
        &potential_basis(len, s),
        z.as_slice(),
        h.hessian.as_slice(),
        l2,
        eval,
    ))
}

/// Finite-difference check of `dtw_grad` and `dtw_hessian_product`.
pub fn check_dtw(theta: &CostMatrix, z: &Matrix, reg: &Regularizer) -> Result<Option<FdOutcome>> {
    let (na, nb) = theta.shape();
    let g = dtw_grad(theta, reg);
    let h = dtw_hessian_product_with(theta, z, reg, &g)?;
    let eval = |w: &[f64]| {
        let c = CostMatrix::new(Matrix::from_vec(na, nb, w.to_vec()).expect("sized")).expect("finite");
        let g = dtw_grad(&c, reg);
        Eval {
            value: g.value,
            support: g.state.q.iter().flat_map(|q| q.map(|v| v > 0.0)).collect(),
            grad: g.alignment.into_vec(),
        }
    };
    let l2 = reg.kind() == RegKind::SquaredL2;
    Ok(fd_check(
        theta.matrix().as_slice(),
        &unit_basis(na * nb),
        z.as_slice(),
        h.hessian.as_slice(),
        l2,
        eval,
    ))
}

/// Oracle discrepancies of one instance: value (negentropy only) and expected path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOutcome {
    pub value_err: Option<f64>,
    pub expectation_err: f64,
}

pub fn oracle_dag(dag: &Dag, reg: &Regularizer) -> Result<OracleOutcome> {
    let paths = enumerate_paths(dag)?;
    let g = dp_grad(dag, reg);
    let (brute, _) = expected_path_brute(&paths, dag, &g.transitions)?;
    let value_err = match reg.kind() {
        RegKind::NegEntropy => Some((dp_value(dag, reg) - log_partition_brute(&paths, dag, reg.gamma())?).abs()),
        RegKind::SquaredL2 => None,
    };
    Ok(OracleOutcome {
        value_err,
        expectation_err: max_abs_diff(&g.expected.edges, &brute.edges),
    })
}

/// `γ log Σ_y exp(score(y) / γ)` over all `S^T` state sequences.
pub fn viterbi_log_partition_brute(theta: &PotentialTensor, gamma: f64) -> Result<f64> {
    let (len, s) = (theta.len(), theta.states());
    let total = (s as f64).powi(len as i32);
    if total > crate::oracle::DEFAULT_PATH_CAP as f64 {
        return Err(Error::PathCapExceeded {
            count: total,
            cap: crate::oracle::DEFAULT_PATH_CAP,
        });
    }
    let mut scores = Vec::with_capacity(total as usize);
    let mut seq = vec![0usize; len];
    loop {
        scores.push(theta.sequence_score(&seq)?);
        // Odometer increment.
        let mut k = 0;
        while k < len && seq[k] + 1 == s {
            seq[k] = 0;
            k += 1;
        }
        if k == len {
            break;
        }
        seq[k] += 1;
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + gamma * scores.iter().map(|x| ((x - m) / gamma).exp()).sum::<f64>().ln())
}

pub fn oracle_viterbi(theta: &PotentialTensor, reg: &Regularizer) -> Result<OracleOutcome> {
    let dag = trellis_dag(theta);
    let paths = enumerate_paths(&dag)?;
    let tg = dp_grad(&dag, reg);
    let (brute, _) = expected_path_brute(&paths, &dag, &tg.transitions)?;
    let brute = trellis_edges_to_tensor(theta, &dag, &brute.edges);
    let g = viterbi_grad(theta, reg);
    let value_err = match reg.kind() {
        RegKind::NegEntropy => Some((viterbi_value(theta, reg) - viterbi_log_partition_brute(theta, reg.gamma())?).abs()),
        RegKind::SquaredL2 => None,
    };
    Ok(OracleOutcome {
        value_err,
        expectation_err: max_abs_diff(g.marginals.as_slice(), brute.as_slice()),
    })
}

/// `-γ log Σ_Y exp(-<Y, θ> / γ)` over all monotone alignments.
pub fn dtw_soft_min_brute(theta: &CostMatrix, gamma: f64) -> Result<f64> {
    let (na, nb) = theta.shape();
    let costs: Vec<f64> = enumerate_alignments(na, nb, crate::oracle::DEFAULT_PATH_CAP)?
        .iter()
        .map(|y| y.dot(theta.matrix()))
        .collect();
    let m = costs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(m - gamma * costs.iter().map(|c| (-(c - m) / gamma).exp()).sum::<f64>().ln())
}

pub fn oracle_dtw(theta: &CostMatrix, reg: &Regularizer) -> Result<OracleOutcome> {
    let (na, nb) = theta.shape();
    let dag = export_dag(theta)?;
    let paths = enumerate_paths(&dag)?;
    let dg = dp_grad(&dag, reg);
    let (brute, _) = expected_path_brute(&paths, &dag, &dg.transitions)?;
    let g = dtw_grad(theta, reg);
    let mut err: f64 = 0.0;
    for i in 0..na {
        for j in 0..nb {
            err = err.max((g.alignment.get(i, j) - brute.nodes[cell_node(nb, i, j)]).abs());
        }
    }
    let value_err = match reg.kind() {
        RegKind::NegEntropy => Some((dtw_value(theta, reg) - dtw_soft_min_brute(theta, reg.gamma())?).abs()),
        RegKind::SquaredL2 => None,
    };
    Ok(OracleOutcome {
        value_err,
        expectation_err: err,
    })
}

/// Settings of a [`run_gradcheck`] sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Instance sizes: DAGs get `size + 2` nodes (at most 12), trellises
    /// `T = S = size`, lattices `size × (size + 1)`.
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub regs: Vec<Regularizer>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: vec![1, 2, 3, 4],
            trials: 10,
            regs: vec![Regularizer::default(), Regularizer::squared_l2(1.0).expect("positive gamma")],
        }
    }
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub check: &'static str,
    pub reg: RegKind,
    pub size: usize,
    pub trials: usize,
    /// Draws that were evaluated (support-stable for squared ℓ2).
    pub used: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub rows: Vec<ReportRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:>4} {:>6} {:>6} {:>10} {:>8}  result",
            "check", "reg", "size", "trials", "used", "worst", "tol"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:<8} {:>4} {:>6} {:>6} {:>10.3e} {:>8.0e}  {}",
                r.check,
                r.reg.name(),
                r.size,
                r.trials,
                r.used,
                r.worst,
                r.tolerance,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        let failed = self.rows.iter().filter(|r| !r.pass).count();
        let _ = writeln!(out, "{} checks, {} failed", self.rows.len(), failed);
        out
    }
}

#[derive(Default)]
struct Tally {
    used: usize,
    grad: f64,
    hess: f64,
    value: f64,
    expectation: f64,
}

impl Tally {
    fn fd(&mut self, o: Option<FdOutcome>) {
        if let Some(o) = o {
            self.used += 1;
            self.grad = self.grad.max(o.grad_err);
            self.hess = self.hess.max(o.hess_err);
        }
    }

    fn oracle(&mut self, o: OracleOutcome) {
        self.used += 1;
        self.value = self.value.max(o.value_err.unwrap_or(0.0));
        self.expectation = self.expectation.max(o.expectation_err);
    }
}

fn fd_rows(rows: &mut Vec<ReportRow>, name: [&'static str; 2], reg: &Regularizer, size: usize, trials: usize, t: &Tally) {
    let enough = match reg.kind() {
        RegKind::NegEntropy => t.used == trials,
        RegKind::SquaredL2 => t.used as f64 >= MIN_STABLE_SHARE * trials as f64,
    };
    for (check, worst, tolerance) in [(name[0], t.grad, GRAD_TOL), (name[1], t.hess, HESS_TOL)] {
        rows.push(ReportRow {
            check,
            reg: reg.kind(),
            size,
            trials,
            used: t.used,
            worst,
            tolerance,
            pass: enough && worst <= tolerance,
        });
    }
}

fn oracle_rows(rows: &mut Vec<ReportRow>, name: [&'static str; 2], reg: &Regularizer, size: usize, trials: usize, t: &Tally) {
    if reg.kind() == RegKind::NegEntropy {
        rows.push(ReportRow {
            check: name[0],
            reg: reg.kind(),
            size,
            trials,
            used: t.used,
            worst: t.value,
            tolerance: VALUE_TOL,
            pass: t.value <= VALUE_TOL,
        });
    }
    rows.push(ReportRow {
        check: name[1],
        reg: reg.kind(),
        size,
        trials,
        used: t.used,
        worst: t.expectation,
        tolerance: EXPECTATION_TOL,
        pass: t.expectation <= EXPECTATION_TOL,
    });
}

/// Runs every check on `trials` random instances per size and regularizer.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    if config.sizes.is_empty() || config.sizes.contains(&0) {
        return Err(Error::Domain("sizes must be positive".to_string()));
    }
    if config.trials == 0 {
        return Err(Error::Domain("trials must be positive".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    for reg in &config.regs {
        for &size in &config.sizes {
            let trials = config.trials;
            let (mut dag_fd, mut dag_or) = (Tally::default(), Tally::default());
            let (mut vit_fd, mut vit_or) = (Tally::default(), Tally::default());
            let (mut dtw_fd, mut dtw_or) = (Tally::default(), Tally::default());
            for _ in 0..trials {
                let nodes = (size + 2).min(12);
                let dag = random_small_dag(&mut rng, nodes, 200);
                let z = random_vec(&mut rng, dag.n_edges(), -1.0, 1.0);
                dag_fd.fd(check_dag(&dag, &z, reg)?);
                dag_or.oracle(oracle_dag(&dag, reg)?);

                let theta = random_potentials(&mut rng, size, size, 2.0);
                let z = random_potential_direction(&mut rng, size, size);
                vit_fd.fd(check_viterbi(&theta, &z, reg)?);
                vit_or.oracle(oracle_viterbi(&theta, reg)?);

                let costs = random_costs(&mut rng, size, size + 1, 2.0);
                let z = crate::instances::random_matrix(&mut rng, size, size + 1, -1.0, 1.0);
                dtw_fd.fd(check_dtw(&costs, &z, reg)?);
                dtw_or.oracle(oracle_dtw(&costs, reg)?);
            }
            fd_rows(&mut rows, ["dag grad", "dag hessian"], reg, size, trials, &dag_fd);
            oracle_rows(&mut rows, ["dag value", "dag expectation"], reg, size, trials, &dag_or);
            fd_rows(&mut rows, ["viterbi grad", "viterbi hessian"], reg, size, trials, &vit_fd);
            oracle_rows(&mut rows, ["viterbi value", "viterbi expect."], reg, size, trials, &vit_or);
            fd_rows(&mut rows, ["dtw grad", "dtw hessian"], reg, size, trials, &dtw_fd);
            oracle_rows(&mut rows, ["dtw value", "dtw expectation"], reg, size, trials, &dtw_or);
        }
    }
    Ok(GradcheckReport { rows })
}
