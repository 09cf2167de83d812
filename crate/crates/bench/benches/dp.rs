use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diffdp::dag_dp::{dp_grad, dp_hessian_product_with};
use diffdp::dtw::{dtw_grad, dtw_hessian_product_with};
use diffdp::instances::{random_dag, random_matrix, random_potential_direction, random_potentials, random_series_costs, random_vec};
use diffdp::smoothed_max::max_omega_with_grad;
use diffdp::viterbi::{viterbi_grad, viterbi_hessian_product_with};
use diffdp::Regularizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn regs() -> [Regularizer; 2] {
    [Regularizer::negentropy(1.0).unwrap(), Regularizer::squared_l2(1.0).unwrap()]
}

fn smoothed_max(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("max_omega");
    for n in [4, 64, 1024] {
        let x = random_vec(&mut rng, n, -3.0, 3.0);
        for reg in regs() {
            group.bench_with_input(BenchmarkId::new(reg.kind().name(), n), &x, |b, x| {
                b.iter(|| max_omega_with_grad(black_box(x), &reg).unwrap())
            });
        }
    }
    group.finish();
}

fn dag(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("dag");
    for n in [50, 200] {
        let g = random_dag(&mut rng, n, 0.1, 1.0);
        let z = random_vec(&mut rng, g.n_edges(), -1.0, 1.0);
        for reg in regs() {
            group.bench_with_input(BenchmarkId::new(format!("grad/{}", reg.kind().name()), n), &g, |b, g| {
                b.iter(|| dp_grad(black_box(g), &reg))
            });
            let grad = dp_grad(&g, &reg);
            group.bench_with_input(BenchmarkId::new(format!("hvp/{}", reg.kind().name()), n), &g, |b, g| {
                b.iter(|| dp_hessian_product_with(black_box(g), &z, &reg, &grad).unwrap())
            });
        }
    }
    group.finish();
}

fn viterbi(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("viterbi");
    for (len, states) in [(20, 5), (100, 20)] {
        let theta = random_potentials(&mut rng, len, states, 1.0);
        let z = random_potential_direction(&mut rng, len, states);
        let id = format!("{len}x{states}");
        for reg in regs() {
            group.bench_with_input(BenchmarkId::new(format!("grad/{}", reg.kind().name()), &id), &theta, |b, t| {
                b.iter(|| viterbi_grad(black_box(t), &reg))
            });
            let grad = viterbi_grad(&theta, &reg);
            group.bench_with_input(BenchmarkId::new(format!("hvp/{}", reg.kind().name()), &id), &theta, |b, t| {
                b.iter(|| viterbi_hessian_product_with(black_box(t), &z, &reg, &grad).unwrap())
            });
        }
    }
    group.finish();
}

fn dtw(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut group = c.benchmark_group("dtw");
    for n in [32, 128] {
        let costs = random_series_costs(&mut rng, n, n, 3);
        let z = random_matrix(&mut rng, n, n, -1.0, 1.0);
        for reg in regs() {
            group.bench_with_input(BenchmarkId::new(format!("grad/{}", reg.kind().name()), n), &costs, |b, c| {
                b.iter(|| dtw_grad(black_box(c), &reg))
            });
            let grad = dtw_grad(&costs, &reg);
            group.bench_with_input(BenchmarkId::new(format!("hvp/{}", reg.kind().name()), n), &costs, |b, c| {
                b.iter(|| dtw_hessian_product_with(black_box(c), &z, &reg, &grad).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, smoothed_max, dag, viterbi, dtw);
criterion_main!(benches);
