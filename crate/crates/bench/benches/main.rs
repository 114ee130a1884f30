use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use stochrk::adaptive::{integrate_stream, Controller};
use stochrk::noise::{iterated_integrals, NoiseBundle, NoiseStream};
use stochrk::problems;
use stochrk::steppers::{step_sra_explicit, step_sra_implicit, step_sri_explicit, NewtonOpts};
use stochrk::tableaus::{builtin, MethodId, Tableau};

fn bench_noise(c: &mut Criterion) {
    let mut g = c.benchmark_group("noise");
    g.bench_function("sample_pair_d1", |b| {
        let mut s = NoiseStream::new(1, 0);
        b.iter(|| s.sample_pair(0.01, 1).unwrap())
    });
    g.bench_function("sample_pair_d19", |b| {
        let mut s = NoiseStream::new(1, 0);
        b.iter(|| s.sample_pair(0.01, 19).unwrap())
    });
    g.bench_function("iterated_integrals_d19", |b| {
        let mut s = NoiseStream::new(1, 0);
        let p = s.sample_pair(0.01, 19).unwrap();
        b.iter(|| iterated_integrals(&p))
    });
    g.finish();
}

fn bench_steps(c: &mut Criterion) {
    let mut g = c.benchmark_group("single_step");
    let h = 1.0 / 64.0;
    let nb = [NoiseBundle::from_increments(0.02, -0.01, h)];
    let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = 0.1 * x[0];
    let gd = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = 0.05 * x[0];
    let ga = |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = 0.05;
    for id in [MethodId::Sosra, MethodId::Sosra2] {
        if let Tableau::Sra(tab) = builtin(id) {
            g.bench_with_input(
                BenchmarkId::new("sra_explicit", id.name()),
                &tab,
                |b, tab| b.iter(|| step_sra_explicit(&f, &ga, tab, 0.0, &[0.5], h, &nb).unwrap()),
            );
        }
    }
    for id in [MethodId::Sosri, MethodId::Sosri2] {
        if let Tableau::Sri(tab) = builtin(id) {
            g.bench_with_input(
                BenchmarkId::new("sri_explicit", id.name()),
                &tab,
                |b, tab| b.iter(|| step_sri_explicit(&f, &gd, tab, 0.0, &[0.5], h, &nb).unwrap()),
            );
        }
    }
    if let Tableau::Sra(tab) = builtin(MethodId::SKenCarp) {
        let opts = NewtonOpts::default();
        g.bench_function("sra_implicit/SKenCarp", |b| {
            b.iter(|| {
                step_sra_implicit(&f, &ga, None, None, &tab, 0.0, &[0.5], h, &nb, &opts).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_integrate(c: &mut Criterion) {
    let mut g = c.benchmark_group("integrate");
    g.sample_size(20);
    let ap = problems::diagonal_test();
    let ctrl = Controller::with_tol(1e-4);
    g.bench_function("diagonal_test/SOSRI/tol1e-4", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            integrate_stream(&ap.problem, MethodId::Sosri, &ctrl, seed, 0, None).unwrap()
        })
    });
    let emt = problems::emt_model(0.05, &Default::default());
    let emt_ctrl = Controller::new(0.5f64.powi(7), 0.5f64.powi(4));
    g.bench_function("emt/SOSRI/abstol2^-7", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            integrate_stream(&emt, MethodId::Sosri, &emt_ctrl, seed, 0, None).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bench_noise, bench_steps, bench_integrate);
criterion_main!(benches);
