//! Seeded random problem instances for checks and benchmarks.

use rand::Rng;

use crate::dag::Dag;
use crate::dag_dp::optimal_path_count;
use crate::dtw::CostMatrix;
use crate::matrix::Matrix;
use crate::viterbi::{PotentialTensor, Tensor3};

/// A connected DAG with `n_nodes` nodes, topologically ordered.
///
/// Every node links to its successor, so all nodes lie on some path; extra
/// forward edges are added with probability `density`. Weights are uniform in
/// `[-scale, scale]`.
pub fn random_dag<R: Rng>(rng: &mut R, n_nodes: usize, density: f64, scale: f64) -> Dag {
    let n = n_nodes.max(2);
    let mut edges = Vec::new();
    for child in 1..n {
        for parent in 0..child {
            if parent + 1 == child || rng.gen_bool(density) {
                edges.push((child, parent, rng.gen_range(-scale..=scale)));
            }
        }
    }
    Dag::new(n, edges).expect("generator builds valid DAGs")
}

/// Like [`random_dag`] with a random size in `3..=max_nodes`, redrawn until
/// it has at most `max_paths` paths.
pub fn random_small_dag<R: Rng>(rng: &mut R, max_nodes: usize, max_paths: u64) -> Dag {
    loop {
        let n = rng.gen_range(3..=max_nodes.max(3));
        let density = rng.gen_range(0.1..0.6);
        let dag = random_dag(rng, n, density, 2.0);
        if dag.path_count() <= max_paths as f64 {
            return dag;
        }
    }
}

/// Integer multiples of `step` in `[-1, 1]`, redrawn until the best path is unique.
pub fn random_grid_dag<R: Rng>(rng: &mut R, max_nodes: usize, max_paths: u64, step: f64) -> Dag {
    let k = (1.0 / step).round() as i64;
    loop {
        let dag = random_small_dag(rng, max_nodes, max_paths);
        let w = (0..dag.n_edges())
            .map(|_| rng.gen_range(-k..=k) as f64 * step)
            .collect();
        let dag = dag.with_weights(w).expect("same edge count");
        if optimal_path_count(&dag) == 1.0 {
            return dag;
        }
    }
}

/// Potentials uniform in `[-scale, scale]` with a time-0 slice that ignores
/// the previous state.
pub fn random_potentials<R: Rng>(rng: &mut R, len: usize, states: usize, scale: f64) -> PotentialTensor {
    let mut t = Tensor3::zeros(len, states);
    for i in 0..states {
        let v = rng.gen_range(-scale..=scale);
        for j in 0..states {
            t.set(0, i, j, v);
        }
    }
    for k in 1..len {
        for i in 0..states {
            for j in 0..states {
                t.set(k, i, j, rng.gen_range(-scale..=scale));
            }
        }
    }
    PotentialTensor::new(t).expect("generator builds valid potentials")
}

/// Direction tensor respecting the time-0 tie of [`PotentialTensor`].
pub fn random_potential_direction<R: Rng>(rng: &mut R, len: usize, states: usize) -> Tensor3 {
    random_potentials(rng, len, states, 1.0).tensor().clone()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..=hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Costs uniform in `[0, scale]`.
pub fn random_costs<R: Rng>(rng: &mut R, n_a: usize, n_b: usize, scale: f64) -> CostMatrix {
    CostMatrix::new(random_matrix(rng, n_a, n_b, 0.0, scale)).expect("finite costs")
}

/// Squared Euclidean costs between two random walks in `dim` dimensions.
pub fn random_series_costs<R: Rng>(rng: &mut R, n_a: usize, n_b: usize, dim: usize) -> CostMatrix {
    let a = random_walk(rng, n_a, dim);
    let b = random_walk(rng, n_b, dim);
    crate::dtw::squared_euclidean_costs(&a, &b).expect("same dimension")
}

/// `n` steps of a walk with increments uniform in `[-1, 1]`, one step per row.
pub fn random_walk<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(n, dim);
    for d in 0..dim {
        let mut x = 0.0;
        for i in 0..n {
            x += rng.gen_range(-1.0..=1.0);
            m.set(i, d, x);
        }
    }
    m
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}
