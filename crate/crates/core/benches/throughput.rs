use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;
use rand_distr::StandardNormal;

use progdiff::denoiser::{loss_and_grad, DenoiserSpec, Example, Parameters};
use progdiff::par;
use progdiff::rng::rng_for;
use progdiff::sampler::{ddim_sample, energy_distance};
use progdiff::NoiseSchedule;

fn points(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "bench-points", 0);
    (0..n)
        .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn batch(n: usize, timesteps: usize) -> Vec<Example> {
    let mut rng = rng_for(0, "bench-batch", 0);
    (0..n)
        .map(|_| Example {
            x0: (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            t: rng.gen_range(0..timesteps),
            eps: (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        })
        .collect()
}

/// Each workload once on a single worker and once on the default pool.
fn modes() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", std::thread::available_parallelism().map_or(1, |n| n.get()))]
}

fn bench_energy_distance(c: &mut Criterion) {
    let (a, b) = (points(1000, 1), points(1000, 2));
    let mut g = c.benchmark_group("energy_distance_1000");
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            par::with_threads(threads, || bench.iter(|| energy_distance(&a, &b)))
        });
    }
    g.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let schedule = NoiseSchedule::cosine(100, 0.008).unwrap();
    let spec = DenoiserSpec::new(2, vec![64, 64, 64], 16).unwrap();
    let p = Parameters::init(&spec, 0).unwrap();
    let data = batch(256, 100);
    let mut g = c.benchmark_group("loss_and_grad_256");
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            par::with_threads(threads, || bench.iter(|| loss_and_grad(&p, &data, &schedule).unwrap()))
        });
    }
    g.finish();
}

fn bench_ddim(c: &mut Criterion) {
    let schedule = NoiseSchedule::cosine(100, 0.008).unwrap();
    let spec = DenoiserSpec::new(2, vec![64, 64, 64], 16).unwrap();
    let p = Parameters::init(&spec, 0).unwrap();
    let mut g = c.benchmark_group("ddim_50_steps_256_samples");
    g.sample_size(20);
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            par::with_threads(threads, || bench.iter(|| ddim_sample(&p, 2, &schedule, 50, 256, 7).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_energy_distance, bench_gradient, bench_ddim);
criterion_main!(benches);
