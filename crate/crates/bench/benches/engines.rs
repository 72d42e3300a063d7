use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use obstacle_walk::gaussian::{
    gibbs_sample, quadrature_marginal, GaussianField, GibbsConfig, QuadratureConfig,
};
use obstacle_walk::{build_tables, discretize, tilt_schedule, KernelConfig, ObstacleSpec, StepLaw};

fn kernel_tables(c: &mut Criterion) {
    let law = StepLaw::uniform3();
    let mut group = c.benchmark_group("build_tables");
    for n in [512usize, 2048, 8192] {
        let profile = discretize(&ObstacleSpec::Quadratic(0.5), n).unwrap();
        let schedule = tilt_schedule(&law, &profile).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                build_tables(
                    black_box(&law),
                    &profile,
                    &schedule,
                    KernelConfig::default(),
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn gibbs_sweeps(c: &mut Criterion) {
    let field = GaussianField::p_obstacle(2.0, 64, 1.0).unwrap();
    c.bench_function("gibbs_p2_n64_1000_sweeps", |b| {
        b.iter(|| {
            let cfg = GibbsConfig {
                sweeps: 1000,
                burn_in: 0,
                observe: vec![64],
                ..Default::default()
            };
            gibbs_sample(black_box(&field), &cfg).unwrap()
        })
    });
}

fn quadrature(c: &mut Criterion) {
    let mut group = c.benchmark_group("quadrature_marginal");
    group.sample_size(10);
    for n in [256usize, 1024] {
        let field = GaussianField::p_obstacle(2.0, n, 1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                quadrature_marginal(black_box(&field), n, &QuadratureConfig::default()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_tables, gibbs_sweeps, quadrature);
criterion_main!(benches);
