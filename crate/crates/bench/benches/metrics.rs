use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use scale_scribe::metrics::{bootstrap_se, icc3k, mann_whitney, rmse, MwMode};
use scale_scribe::{metrics::full_report, ReportConfig, ScaleDefinition};
use scale_scribe_bench::{paired_cases, total_pairs};

fn icc(c: &mut Criterion) {
    let mut group = c.benchmark_group("icc3k");
    for n in [40, 400, 4000] {
        let table: Vec<[f64; 2]> = total_pairs(n, 1).into_iter().map(|(a, b)| [a, b]).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &table, |b, t| b.iter(|| icc3k(black_box(t))));
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let pairs = total_pairs(60, 2);
    c.bench_function("bootstrap_se rmse n=60 B=1000", |b| {
        b.iter(|| bootstrap_se(black_box(&pairs), |s| rmse(s), 1000, 7))
    });
}

fn mann_whitney_modes(c: &mut Criterion) {
    let x: Vec<f64> = (0..10).map(|i| i as f64 * 1.5).collect();
    let y: Vec<f64> = (0..10).map(|i| i as f64 * 1.3 + 0.1).collect();
    c.bench_function("mann_whitney exact 10x10", |b| {
        b.iter(|| mann_whitney(black_box(&x), black_box(&y), MwMode::Exact))
    });
    c.bench_function("mann_whitney normal 10x10", |b| {
        b.iter(|| mann_whitney(black_box(&x), black_box(&y), MwMode::NormalApprox))
    });
}

fn report(c: &mut Criterion) {
    let scale = ScaleDefinition::bprs_e();
    let cases = paired_cases(40, 3);
    let config = ReportConfig::default();
    c.bench_function("full_report n=40", |b| b.iter(|| full_report(black_box(&cases), &scale, &config)));
}

criterion_group!(benches, icc, bootstrap, mann_whitney_modes, report);
criterion_main!(benches);
