use std::hint::black_box;

use bmpursuit::learning::{log_pl_gradient, log_pl_hessian, mpl_gradient_ascent, mpl_sesop, SesopConfig};
use bmpursuit::BoltzmannParams;
use bmpursuit_bench::supports;
use criterion::{criterion_group, criterion_main, Criterion};

fn calculus(c: &mut Criterion) {
    let data = supports(16, 2, 16000, 7);
    let p = BoltzmannParams::iid(16, 0.1).unwrap();
    let mut g = c.benchmark_group("log_pl_m16_n16000");
    g.bench_function("gradient", |b| b.iter(|| log_pl_gradient(black_box(&p), &data).unwrap()));
    g.bench_function("hessian", |b| b.iter(|| log_pl_hessian(black_box(&p), &data).unwrap()));
    g.finish();
}

fn fitting(c: &mut Criterion) {
    let data = supports(16, 2, 4000, 8);
    let mut g = c.benchmark_group("fit_m16_n4000");
    g.sample_size(10);
    for history in [0, 2] {
        let cfg = SesopConfig {
            history,
            max_iters: 20,
            ..SesopConfig::default()
        };
        g.bench_function(format!("sesop{history}_20"), |b| b.iter(|| mpl_sesop(black_box(&data), &cfg).unwrap()));
    }
    g.bench_function("gradient_ascent_20", |b| b.iter(|| mpl_gradient_ascent(black_box(&data), 20, 1.0).unwrap()));
    g.finish();
}

criterion_group!(benches, calculus, fitting);
criterion_main!(benches);
