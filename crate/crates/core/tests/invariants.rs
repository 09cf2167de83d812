//! Structural properties of the engines on random instances.

use diffdp::dag_dp::{dp_grad, dp_value, edge_indicator};
use diffdp::dtw::{dtw_grad, dtw_value, export_dag, hard_dtw};
use diffdp::instances::{random_costs, random_potentials, random_small_dag};
use diffdp::losses::{surrogate_loss_dag, surrogate_loss_viterbi};
use diffdp::oracle::enumerate_paths;
use diffdp::viterbi::{state_marginals, trellis_dag, trellis_edges_to_tensor, viterbi_grad, viterbi_value};
use diffdp::{CostMatrix, Matrix, PotentialTensor, Regularizer, Tensor3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn regs(gamma: f64) -> [Regularizer; 2] {
    [Regularizer::negentropy(gamma).unwrap(), Regularizer::squared_l2(gamma).unwrap()]
}

fn mix(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dag_value_is_convex(seed in any::<u64>(), lambda in 0.0f64..1.0, gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_small_dag(&mut rng, 10, 100);
        let w = diffdp::instances::random_vec(&mut rng, a.n_edges(), -2.0, 2.0);
        let b = a.with_weights(w).unwrap();
        let m = a.with_weights(mix(a.weights(), b.weights(), lambda)).unwrap();
        for reg in regs(gamma) {
            let lhs = dp_value(&m, &reg);
            let rhs = lambda * dp_value(&a, &reg) + (1.0 - lambda) * dp_value(&b, &reg);
            prop_assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn dtw_value_is_concave(seed in any::<u64>(), lambda in 0.0f64..1.0, gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_costs(&mut rng, 4, 5, 3.0);
        let b = random_costs(&mut rng, 4, 5, 3.0);
        let m = CostMatrix::new(Matrix::from_vec(4, 5, mix(a.matrix().as_slice(), b.matrix().as_slice(), lambda)).unwrap()).unwrap();
        for reg in regs(gamma) {
            let lhs = dtw_value(&m, &reg);
            let rhs = lambda * dtw_value(&a, &reg) + (1.0 - lambda) * dtw_value(&b, &reg);
            prop_assert!(lhs >= rhs - 1e-10);
        }
    }

    #[test]
    fn soft_alignment_is_a_mean_alignment(seed in any::<u64>(), gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = random_costs(&mut rng, 5, 4, 2.0);
        for reg in regs(gamma) {
            let e = dtw_grad(&costs, &reg).alignment;
            prop_assert!(e.as_slice().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            prop_assert!((e.get(0, 0) - 1.0).abs() < 1e-12);
            prop_assert!((e.get(4, 3) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_reflection(seed in any::<u64>(), gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = random_costs(&mut rng, 3, 4, 2.0);
        let dag = export_dag(&costs).unwrap();
        for reg in regs(gamma) {
            prop_assert!((dtw_value(&costs, &reg) + dp_value(&dag, &reg)).abs() < 1e-10);
        }
    }

    #[test]
    fn viterbi_matches_its_trellis(seed in any::<u64>(), gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = random_potentials(&mut rng, 4, 3, 2.0);
        let dag = trellis_dag(&theta);
        for reg in regs(gamma) {
            prop_assert!((viterbi_value(&theta, &reg) - dp_value(&dag, &reg)).abs() < 1e-10);
            let g = viterbi_grad(&theta, &reg);
            let from_dag = trellis_edges_to_tensor(&theta, &dag, &dp_grad(&dag, &reg).expected.edges);
            for (a, b) in g.marginals.as_slice().iter().zip(from_dag.as_slice()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let rows = state_marginals(&g.marginals);
            for t in 0..rows.rows() {
                prop_assert!((rows.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dag_marginals_conserve_flow(seed in any::<u64>(), gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = random_small_dag(&mut rng, 12, 200);
        for reg in regs(gamma) {
            let g = dp_grad(&dag, &reg);
            for node in 1..dag.n_nodes() {
                let inflow: f64 = dag.edges_into(node).map(|e| g.expected.edges[e]).sum();
                prop_assert!((inflow - g.expected.nodes[node]).abs() < 1e-12);
            }
            for node in 0..dag.n_nodes() - 1 {
                let outflow: f64 = dag.edges_out_of(node).iter().map(|&e| g.expected.edges[e]).sum();
                prop_assert!((outflow - g.expected.nodes[node]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn surrogate_is_convex_and_nonnegative(seed in any::<u64>(), lambda in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_small_dag(&mut rng, 8, 50);
        let b = a.with_weights(diffdp::instances::random_vec(&mut rng, a.n_edges(), -2.0, 2.0)).unwrap();
        let m = a.with_weights(mix(a.weights(), b.weights(), lambda)).unwrap();
        let paths = enumerate_paths(&a).unwrap();
        let y = edge_indicator(&a, paths.get(0));
        for reg in regs(1.0).iter().map(Some).chain([None]) {
            let l = |d| surrogate_loss_dag(d, &y, None, reg).unwrap().loss;
            prop_assert!(l(&m) <= lambda * l(&a) + (1.0 - lambda) * l(&b) + 1e-10);
            if reg.is_none() {
                prop_assert!(l(&a) >= -1e-12);
            }
        }
    }
}

#[test]
fn hard_dtw_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let costs = random_costs(&mut rng, 4, 4, 2.0);
        let (value, y) = hard_dtw(&costs);
        let best = diffdp::dtw::enumerate_alignments(4, 4, 1000)
            .unwrap()
            .iter()
            .map(|a| a.dot(costs.matrix()))
            .fold(f64::INFINITY, f64::min);
        assert!((value - best).abs() < 1e-12);
        assert!((y.dot(costs.matrix()) - value).abs() < 1e-12);
    }
}

#[test]
fn crf_likelihood_sums_to_one() {
    // exp(-NLL) over all sequences is a probability distribution.
    let theta = PotentialTensor::new(Tensor3::from_fn(3, 2, |t, i, j| if t == 0 { i as f64 } else { (i + 2 * j) as f64 * 0.3 - 0.4 })).unwrap();
    let reg = Regularizer::negentropy(1.0).unwrap();
    let mut total = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                total += (-surrogate_loss_viterbi(&theta, &[a, b, c], None, Some(&reg)).unwrap().loss).exp();
            }
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
}
