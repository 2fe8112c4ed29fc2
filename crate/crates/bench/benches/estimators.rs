use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use fgmhd::classical::{self, EstimatorConfig, Method};
use fgmhd::regressor;
use fgmhd::sampling::{self, SamplingConfig};
use fgmhd::scheduler::{self, MmdsConfig, SchedulerState};
use fgmhd::synth::{self, CanonicalKind, IfsSystem};
use fgmhd::toy::{self, CascadeParams};

fn classical_estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimators");
    for side in [256usize, 1024] {
        let (img, _) = synth::canonical(CanonicalKind::Sierpinski, side, 8).unwrap();
        let cfg = EstimatorConfig::for_side(side);
        for method in [Method::Box, Method::Spectrum, Method::Sandbox] {
            group.bench_with_input(BenchmarkId::new(method.as_str(), side), &img, |b, img| {
                b.iter(|| classical::estimate(method, black_box(img), &cfg, 42).unwrap())
            });
        }
    }
    let dust = synth::chaos_game(&IfsSystem::sierpinski(), 200_000, 256, 42).unwrap();
    let cfg = EstimatorConfig::for_side(256);
    group.bench_function("perimeter/256", |b| {
        b.iter(|| classical::perimeter_area(black_box(&dust), &cfg))
    });
    group.finish();
}

fn regressor_forward(c: &mut Criterion) {
    let (img, _) = synth::canonical(CanonicalKind::Sierpinski, 256, 8).unwrap();
    let mut group = c.benchmark_group("regressor");
    for kernels in [vec![3], vec![3, 5, 7]] {
        let model = regressor::init_model_with(&kernels, 42).unwrap();
        group.bench_function(format!("predict/{}", regressor::kernel_label(&kernels)), |b| {
            b.iter(|| regressor::predict(&model, black_box(&img)).unwrap())
        });
    }
    let model = regressor::init_model(42);
    let small = img.resample_area(regressor::INPUT_SIDE, regressor::INPUT_SIDE).unwrap();
    group.bench_function("loss_and_gradient/3+5+7", |b| {
        b.iter(|| regressor::loss_and_gradient(&model, black_box(&small), 1.585).unwrap())
    });
    group.finish();
}

fn generation(c: &mut Criterion) {
    let params = CascadeParams::sierpinski();
    c.bench_function("cascade_generate/64", |b| {
        b.iter(|| toy::cascade_generate(black_box(&params), 7))
    });
    c.bench_function("rejection_sample/tau1.5_n32", |b| {
        b.iter(|| sampling::rejection_sample(&params, &SamplingConfig::new(1.5, 32), 7).unwrap())
    });
}

fn scheduling(c: &mut Criterion) {
    let cfg = MmdsConfig::default();
    let losses: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64)).collect();
    c.bench_function("mmds_trace/1000", |b| {
        b.iter(|| scheduler::mmds_trace(black_box(&losses), &cfg).unwrap())
    });
    c.bench_function("mmds_step", |b| {
        b.iter(|| scheduler::mmds_step(black_box(SchedulerState::default()), 0.5, &cfg).unwrap())
    });
    c.bench_function("moran/unequal", |b| {
        b.iter(|| synth::moran_dimension(black_box(&[0.5, 0.25, 0.25])).unwrap())
    });
}

criterion_group!(benches, classical_estimators, regressor_forward, generation, scheduling);
criterion_main!(benches);
