use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use locrand_bench::{panel, sample};
use locrand_core::inference::confidence_interval;
use locrand_core::sensitivity::gamma_bounds;
use locrand_core::stats::permutation_pvalue;
use locrand_core::winselect::scan_windows;
use locrand_core::{
    GammaBoundsSpec, GridSpec, InferenceSpec, PermutationPlan, StatKind, Window, WindowScanSpec,
};
use std::hint::black_box;

fn pvalues(c: &mut Criterion) {
    let mut group = c.benchmark_group("permutation_pvalue");
    let (treated, control) = sample(8, 1.0);
    group.bench_function("exhaustive/8+8", |b| {
        b.iter(|| {
            permutation_pvalue(
                StatKind::DiffMeans,
                black_box(&treated),
                &control,
                &PermutationPlan::exhaustive(),
            )
        })
    });
    for kind in [
        StatKind::DiffMeans,
        StatKind::RankSum,
        StatKind::KolmogorovSmirnov,
    ] {
        let (treated, control) = sample(80, 0.5);
        let plan = PermutationPlan::monte_carlo(9999, 1);
        group.bench_with_input(
            BenchmarkId::new("monte_carlo_9999/80+80", kind.name()),
            &kind,
            |b, &kind| b.iter(|| permutation_pvalue(kind, black_box(&treated), &control, &plan)),
        );
    }
    group.finish();
}

fn scan(c: &mut Criterion) {
    let ds = panel(27);
    let spec = WindowScanSpec {
        plan: PermutationPlan::monte_carlo(999, 2),
        min_obs_per_side: 2,
        ..WindowScanSpec::default()
    };
    c.bench_function("scan_windows/27_per_margin", |b| {
        b.iter(|| scan_windows(black_box(&ds), &spec))
    });
}

fn inversion(c: &mut Criterion) {
    let ds = panel(27);
    let window = Window::symmetric(3.0).expect("positive half-width");
    let mut spec = InferenceSpec::new(window, GridSpec::new(-2.0, 6.0, 0.1).expect("valid grid"));
    spec.plan = PermutationPlan::monte_carlo(999, 3);
    c.bench_function("confidence_interval/81_points", |b| {
        b.iter(|| confidence_interval(black_box(&ds), &spec))
    });

    let mut bounds = GammaBoundsSpec::new(window);
    bounds.plan = PermutationPlan::monte_carlo(999, 4);
    c.bench_function("gamma_bounds/3_gammas", |b| {
        b.iter(|| gamma_bounds(black_box(&ds), &bounds))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = pvalues, scan, inversion
}
criterion_main!(benches);
