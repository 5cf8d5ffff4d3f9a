use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stratwave::energy::{eval_h, first_variation, GravityRefs};
use stratwave::hessian::{assemble_hessian, build_basis, second_variation, BasisOptions};
use stratwave::laminar::{lam1_flow, lam1_profiles, maps_for_state};
use stratwave::profiles::BernoulliMap;
use stratwave::state::{random_admissible_with, FlowState, PerturbationClass, RandomOptions};

fn lam1(nx: usize, ns: usize) -> (FlowState, [BernoulliMap; 2], GravityRefs) {
    let st = lam1_flow().unwrap().lift(nx, ns, ns, 0.0, 0.0).unwrap();
    let maps = maps_for_state(&st, &lam1_profiles()).unwrap();
    let refs = GravityRefs::defaults(&maps, st.p1, st.p2);
    (st, maps, refs)
}

fn grid_operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("laplacian");
    for (nx, ns) in [(32, 17), (64, 33), (128, 65)] {
        let (st, _, _) = lam1(nx, ns);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{nx}x{ns}")), &st, |b, st| {
            b.iter(|| st.grids[1].mapped_laplacian(black_box(&st.psi[1])).unwrap())
        });
    }
    group.finish();
}

fn bernoulli_map(c: &mut Criterion) {
    let (_, maps, _) = lam1(32, 17);
    c.bench_function("map eval", |b| {
        b.iter(|| maps[1].eval(black_box(0.25), black_box(-0.3)).unwrap())
    });
}

fn variations(c: &mut Criterion) {
    let (st, maps, refs) = lam1(64, 33);
    let opts = RandomOptions {
        class: PerturbationClass::Full,
        ..RandomOptions::default()
    };
    let a = random_admissible_with(1, &st, opts).unwrap();
    let b = random_admissible_with(2, &st, opts).unwrap();
    c.bench_function("H 64x33", |bch| bch.iter(|| eval_h(&st, &maps, refs).unwrap()));
    c.bench_function("first variation 64x33", |bch| {
        bch.iter(|| first_variation(&st, &maps, refs, black_box(&a)).unwrap())
    });
    c.bench_function("second variation 64x33", |bch| {
        bch.iter(|| second_variation(&st, &maps, refs, black_box(&a), black_box(&b)).unwrap())
    });
}

fn hessian(c: &mut Criterion) {
    let (st, maps, refs) = lam1(32, 17);
    let (basis, _) = build_basis(&st, BasisOptions::default()).unwrap();
    let mut group = c.benchmark_group("hessian assembly");
    group.sample_size(10);
    group.bench_function("40-element basis 32x17", |b| {
        b.iter(|| assemble_hessian(&st, &maps, refs, black_box(&basis)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, grid_operators, bernoulli_map, variations, hessian);
criterion_main!(benches);
