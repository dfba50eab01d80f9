//! Batch kernels on a one-thread pool versus the default pool.
//!
//! Build with `--no-default-features` to time the sequential fallback; the
//! two pool sizes then run the same single-threaded code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qflow::evolve::euler_kl_grad;
use qflow::flow::{init_identity, FlowModel, Prior};
use qflow::liouvillian::{compile, model_terms, HarmonicWell, ModelSpec, QOperator, RatioEvaluator};
use qflow::metrics::liouvillian_loss_at;
use qflow::reference::{GridGeometry, GridOperator, GridState};

fn setup() -> (FlowModel, FlowModel, QOperator) {
    let spec = ModelSpec::Harmonic {
        wells: vec![HarmonicWell {
            omega: 1.0,
            gamma: 1.0,
            nbar: 5.0,
        }],
    };
    let op = compile(&model_terms(&spec), 1).unwrap();
    let prior = Prior::diagonal(vec![-1.0, -1.0], vec![0.5, 0.5]).unwrap();
    let cur = init_identity(2, prior, 3, 1).unwrap();
    let mut next = cur.clone();
    for (i, p) in next.params_mut().iter_mut().enumerate() {
        *p += 1e-3 * ((i % 7) as f64 - 3.0);
    }
    (next, cur, op)
}

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let all = rayon::current_num_threads();
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| (n, rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

fn kernels(c: &mut Criterion) {
    let (next, cur, op) = setup();
    let ev = RatioEvaluator::new(&op).unwrap();
    let batch = next.sample(1000, &mut ChaCha8Rng::seed_from_u64(2));
    let geom = GridGeometry::cube(2, 256, 10.0).unwrap();
    let grid = GridState::from_fn(geom.clone(), |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
    let gop = GridOperator::new(&op, &geom).unwrap();

    let mut g = c.benchmark_group("batch");
    g.sample_size(20);
    for (threads, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("sample_10k", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| next.sample(10_000, &mut ChaCha8Rng::seed_from_u64(3))))
        });
        g.bench_with_input(BenchmarkId::new("euler_kl_grad_1k", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| euler_kl_grad(&next, &cur, &op, 0.01, &batch, 1e-12).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("liouvillian_loss_1k", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| liouvillian_loss_at(&next, &ev, &batch).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("grid_apply_256", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| gop.apply(grid.values())))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
