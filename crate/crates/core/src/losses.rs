//! Structured losses and their gradients with respect to the potentials.
//!
//! The surrogate `DPΩ(θ + C) - <Y_true, θ>` is written for maximization. DTW
//! minimizes costs, so its surrogate reflects through `-θ`:
//! `<Y_true, θ> - DTWΩ(θ - C)`, with gradient `Y_true - ∇DTWΩ(θ - C)`.

use crate::dag::{check_edge_len, Dag};
use crate::dag_dp::{dp_grad, hard_value_and_path};
use crate::dtw::{check_alignment, dtw_grad, dtw_hessian_product_with, hard_dtw, CostMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::smoothed_max::Regularizer;
use crate::viterbi::{
    check_sequence, hard_viterbi, sequence_indicator, state_marginals, viterbi_grad,
    viterbi_hessian_product_with, PotentialTensor, Tensor3,
};

/// Additive cost weights `C` with `C(Y_true, Y) = <C, Y>`; finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostAugmentation<T>(T);

impl<T: AsRef<[f64]>> CostAugmentation<T> {
    pub fn new(c: T) -> Result<Self> {
        if let Some((index, &value)) = c.as_ref().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(c))
    }

    pub fn weights(&self) -> &T {
        &self.0
    }

    pub fn into_inner(self) -> T {
        self.0
    }
}

/// A loss value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub grad: T,
}

/// Divergence between true and predicted state marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    SquaredL2,
    Kl,
}

/// Edge ids of the source-to-sink path encoded by a 0/1 edge indicator.
pub fn path_from_indicator(dag: &Dag, y: &[f64]) -> Result<Vec<usize>> {
    check_edge_len(dag, y.len())?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidStructure("path entries must be 0 or 1".to_string()));
    }
    let mut path = Vec::new();
    let mut node = dag.n_nodes() - 1;
    while node != 0 {
        let mut chosen = dag.edges_into(node).filter(|&e| y[e] == 1.0);
        let e = match (chosen.next(), chosen.next()) {
            (Some(e), None) => e,
            _ => {
                return Err(Error::InvalidStructure(format!(
                    "node {} needs exactly one selected incoming edge",
                    node + 1
                )))
            }
        };
        path.push(e);
        node = dag.parent(e);
    }
    if y.iter().filter(|&&v| v == 1.0).count() != path.len() {
        return Err(Error::InvalidStructure("selected edges outside the path".to_string()));
    }
    path.reverse();
    Ok(path)
}

fn sum(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + sign * y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Surrogate on a DAG; `reg = None` is the hard max (structured hinge when `C` is a cost).
pub fn surrogate_loss_dag(
    dag: &Dag,
    y_true: &[f64],
    cost: Option<&CostAugmentation<Vec<f64>>>,
    reg: Option<&Regularizer>,
) -> Result<LossGrad<Vec<f64>>> {
    path_from_indicator(dag, y_true)?;
    let augmented = match cost {
        Some(c) => {
            check_edge_len(dag, c.weights().len())?;
            dag.with_weights(sum(dag.weights(), c.weights(), 1.0))?
        }
        None => dag.clone(),
    };
    let (value, y) = match reg {
        Some(r) => {
            let g = dp_grad(&augmented, r);
            (g.value, g.expected.edges)
        }
        None => {
            let h = hard_value_and_path(&augmented);
            let y = h.indicator(&augmented);
            (h.value, y)
        }
    };
    Ok(LossGrad {
        loss: value - dot(y_true, dag.weights()),
        grad: sum(&y, y_true, -1.0),
    })
}

/// Surrogate on a trellis for a true state sequence; `reg = None` is the hard max.
pub fn surrogate_loss_viterbi(
    theta: &PotentialTensor,
    y_true: &[usize],
    cost: Option<&CostAugmentation<Tensor3>>,
    reg: Option<&Regularizer>,
) -> Result<LossGrad<Tensor3>> {
    check_sequence(y_true, theta.len(), theta.states())?;
    let truth = sequence_indicator(y_true, theta.states())?;
    let augmented = match cost {
        Some(c) => theta.add(c.weights())?,
        None => theta.clone(),
    };
    let (value, y) = match reg {
        Some(r) => {
            let g = viterbi_grad(&augmented, r);
            (g.value, g.marginals)
        }
        None => {
            let h = hard_viterbi(&augmented);
            (h.value, sequence_indicator(&h.states, theta.states())?)
        }
    };
    let grad = Tensor3::from_vec(theta.len(), theta.states(), sum(y.as_slice(), truth.as_slice(), -1.0))?;
    Ok(LossGrad {
        loss: value - theta.tensor().dot(&truth),
        grad,
    })
}

/// Surrogate on a DTW lattice for a true alignment; `reg = None` is hard DTW.
pub fn surrogate_loss_dtw(
    theta: &CostMatrix,
    y_true: &Matrix,
    cost: Option<&CostAugmentation<Matrix>>,
    reg: Option<&Regularizer>,
) -> Result<LossGrad<Matrix>> {
    let (na, nb) = theta.shape();
    y_true.check_shape(na, nb)?;
    check_alignment(y_true)?;
    let shifted = match cost {
        Some(c) => theta.perturbed(c.weights(), -1.0)?,
        None => theta.clone(),
    };
    let (value, e) = match reg {
        Some(r) => {
            let g = dtw_grad(&shifted, r);
            (g.value, g.alignment)
        }
        None => hard_dtw(&shifted),
    };
    let grad = Matrix::from_vec(na, nb, sum(y_true.as_slice(), e.as_slice(), -1.0))?;
    Ok(LossGrad {
        loss: theta.matrix().dot(y_true) - value,
        grad,
    })
}

/// Unit cost per mistagged position: `c[t, i, j] = 1{i ≠ y_t}`.
pub fn hamming_cost(y_true: &[usize], n_states: usize) -> Result<CostAugmentation<Tensor3>> {
    check_sequence(y_true, y_true.len(), n_states)?;
    let c = Tensor3::from_fn(y_true.len(), n_states, |t, i, _| f64::from(u8::from(i != y_true[t])));
    CostAugmentation::new(c)
}

/// `T × S` one-hot state marginals of a sequence.
pub fn sequence_state_marginals(y_true: &[usize], n_states: usize) -> Result<Matrix> {
    check_sequence(y_true, y_true.len(), n_states)?;
    let mut m = Matrix::zeros(y_true.len(), n_states);
    for (t, &s) in y_true.iter().enumerate() {
        m.set(t, s, 1.0);
    }
    Ok(m)
}

/// Divergence between true and predicted state marginals, differentiated
/// through one Hessian-vector product of the smoothed Viterbi.
pub fn relaxed_marginal_loss(
    y_true: &[usize],
    theta: &PotentialTensor,
    reg: &Regularizer,
    divergence: Divergence,
) -> Result<LossGrad<Tensor3>> {
    check_sequence(y_true, theta.len(), theta.states())?;
    let (len, s) = (theta.len(), theta.states());
    let truth = sequence_state_marginals(y_true, s)?;
    let grad = viterbi_grad(theta, reg);
    let pred = state_marginals(&grad.marginals);

    let mut loss = 0.0;
    let mut d_pred = Matrix::zeros(len, s);
    match divergence {
        Divergence::SquaredL2 => {
            for t in 0..len {
                for i in 0..s {
                    let r = pred.get(t, i) - truth.get(t, i);
                    loss += r * r;
                    d_pred.set(t, i, 2.0 * r);
                }
            }
        }
        Divergence::Kl => {
            // Only the true states carry mass, so KL reduces to -Σ_t log p_t(y_t).
            for (t, &y) in y_true.iter().enumerate() {
                let p = pred.get(t, y);
                if p <= 0.0 {
                    return Err(Error::Domain(format!(
                        "predicted marginal of state {} at position {} is zero; KL needs the entropy regularizer",
                        y + 1,
                        t + 1
                    )));
                }
                loss -= p.ln();
                d_pred.set(t, y, -1.0 / p);
            }
        }
    }

    // State marginals sum edge marginals over the previous state.
    let z = Tensor3::from_fn(len, s, |t, i, _| d_pred.get(t, i));
    let h = viterbi_hessian_product_with(theta, &z, reg, &grad)?;
    Ok(LossGrad { loss, grad: h.hessian })
}

/// `‖L (E - Y_true)ᵀ‖²_F` with `L` lower-triangular ones, and its gradient in `E`.
///
/// Each row contributes the squared running sums of its differences along
/// the columns.
pub fn area_loss(y_true: &Matrix, e: &Matrix) -> Result<LossGrad<Matrix>> {
    let (na, nb) = y_true.shape();
    e.check_shape(na, nb)?;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(na, nb);
    let mut run = vec![0.0; nb];
    for i in 0..na {
        let mut c = 0.0;
        for (k, r) in run.iter_mut().enumerate() {
            c += e.get(i, k) - y_true.get(i, k);
            *r = c;
            loss += c * c;
        }
        let mut tail = 0.0;
        for j in (0..nb).rev() {
            tail += 2.0 * run[j];
            grad.set(i, j, tail);
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Area loss of the soft alignment `∇DTWΩ(θ)`, with its gradient in `θ`.
pub fn area_loss_dtw(y_true: &Matrix, theta: &CostMatrix, reg: &Regularizer) -> Result<LossGrad<Matrix>> {
    let g = dtw_grad(theta, reg);
    let inner = area_loss(y_true, &g.alignment)?;
    let h = dtw_hessian_product_with(theta, &inner.grad, reg, &g)?;
    Ok(LossGrad {
        loss: inner.loss,
        grad: h.hessian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::tests::diamond;
    use crate::dtw::enumerate_alignments;
    use crate::oracle::{enumerate_paths, log_partition_brute};
    use approx::assert_abs_diff_eq;

    fn ent(g: f64) -> Regularizer {
        Regularizer::negentropy(g).unwrap()
    }

    fn l2(g: f64) -> Regularizer {
        Regularizer::squared_l2(g).unwrap()
    }

    fn two_state() -> PotentialTensor {
        PotentialTensor::from_vec(1, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn indicator_paths() {
        let g = diamond();
        let ps = enumerate_paths(&g).unwrap();
        for p in ps.iter() {
            let y = crate::dag_dp::edge_indicator(&g, p);
            assert_eq!(path_from_indicator(&g, &y).unwrap(), p);
        }
        assert!(path_from_indicator(&g, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(path_from_indicator(&g, &[0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(path_from_indicator(&g, &[0.5, 0.0, 0.5, 0.0]).is_err());
    }

    #[test]
    fn surrogate_on_diamond() {
        let g = diamond();
        let ps = enumerate_paths(&g).unwrap();
        let best = crate::dag_dp::edge_indicator(&g, ps.get(0));
        let hard = surrogate_loss_dag(&g, &best, None, None).unwrap();
        assert_eq!(hard.loss, 0.0);
        assert!(hard.grad.iter().all(|&v| v == 0.0));

        // Negative log-likelihood under the Gibbs distribution over both paths.
        let z = log_partition_brute(&ps, &g, 1.0).unwrap();
        for (k, score) in ps.scores(&g).into_iter().enumerate() {
            let y = crate::dag_dp::edge_indicator(&g, ps.get(k));
            let nll = surrogate_loss_dag(&g, &y, None, Some(&ent(1.0))).unwrap();
            assert_abs_diff_eq!(nll.loss, z - score, epsilon = 1e-12);
        }
    }

    #[test]
    fn hamming_examples() {
        let c = hamming_cost(&[0, 0, 0], 1).unwrap();
        assert!(c.weights().as_slice().iter().all(|&v| v == 0.0));
        let c = hamming_cost(&[0, 1], 2).unwrap();
        let w = c.weights();
        for j in 0..2 {
            assert_eq!(w.get(0, 0, j), 0.0);
            assert_eq!(w.get(0, 1, j), 1.0);
            assert_eq!(w.get(1, 0, j), 1.0);
            assert_eq!(w.get(1, 1, j), 0.0);
        }
        let truth = sequence_indicator(&[0, 1], 2).unwrap();
        assert_eq!(w.dot(&truth), 0.0);
    }

    #[test]
    fn hinge_is_nonnegative_with_hamming() {
        let theta = PotentialTensor::from_vec(
            2,
            2,
            vec![0.5, 0.5, -0.3, -0.3, 0.2, -1.0, 0.7, 0.1],
        )
        .unwrap();
        for y in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let c = hamming_cost(&y, 2).unwrap();
            let l = surrogate_loss_viterbi(&theta, &y, Some(&c), None).unwrap();
            assert!(l.loss >= 0.0);
        }
    }

    #[test]
    fn relaxed_two_state() {
        let sigma = 1.0 / (1.0 + (-1f64).exp());
        let l = relaxed_marginal_loss(&[0], &two_state(), &ent(1.0), Divergence::SquaredL2).unwrap();
        assert_abs_diff_eq!(l.loss, 2.0 * (1.0 - sigma).powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(l.loss, 0.1446590, epsilon = 1e-7);
        let kl = relaxed_marginal_loss(&[0], &two_state(), &ent(1.0), Divergence::Kl).unwrap();
        assert_abs_diff_eq!(kl.loss, -sigma.ln(), epsilon = 1e-15);

        // A single state is always predicted exactly.
        let one = PotentialTensor::from_vec(3, 1, vec![0.3, -1.0, 2.0]).unwrap();
        let l = relaxed_marginal_loss(&[0, 0, 0], &one, &ent(1.0), Divergence::SquaredL2).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_rejects_sparse_predictions() {
        let theta = PotentialTensor::from_vec(1, 2, vec![5.0, 5.0, 0.0, 0.0]).unwrap();
        let r = relaxed_marginal_loss(&[1], &theta, &l2(0.1), Divergence::Kl);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn area_examples() {
        let diag = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let down_right = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let same = area_loss(&diag, &diag).unwrap();
        assert_eq!(same.loss, 0.0);
        assert!(same.grad.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(area_loss(&diag, &down_right).unwrap().loss, 2.0);
        assert_eq!(area_loss(&down_right, &diag).unwrap().loss, 2.0);
        assert!(area_loss(&diag, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn area_loss_is_symmetric_on_hard_pairs() {
        let all = enumerate_alignments(3, 3, 100).unwrap();
        for a in &all {
            for b in &all {
                let ab = area_loss(a, b).unwrap().loss;
                assert_eq!(ab, area_loss(b, a).unwrap().loss);
                assert_eq!(ab == 0.0, a == b);
            }
        }
    }

    #[test]
    fn dtw_surrogate_at_the_optimum() {
        let theta = CostMatrix::from_rows(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        let diag = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let l = surrogate_loss_dtw(&theta, &diag, None, None).unwrap();
        assert_eq!(l.loss, 0.0);
        let soft = surrogate_loss_dtw(&theta, &diag, None, Some(&ent(1.0))).unwrap();
        assert!(soft.loss > 0.0);
        assert!(surrogate_loss_dtw(&theta, &Matrix::zeros(2, 2), None, None).is_err());
    }
}
