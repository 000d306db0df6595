use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use assoc_clt::cltlab::{normalized_sums, NormalizationSpec};
use assoc_clt::fields::{make_gaussian, make_iid, IidLaw};
use assoc_clt::lattice::{IndexBox, MultiIndex};
use assoc_clt::CovarianceModel64;

fn bench_variance(c: &mut Criterion) {
    let model = CovarianceModel64::radial_power(1, 1.0, 1.0).unwrap();
    let n = MultiIndex::splat(1, 1 << 14);
    c.bench_function("variance_exact_harmonic_16k", |b| {
        b.iter(|| model.variance_exact(&n).unwrap())
    });
}

fn bench_synthesis(c: &mut Criterion) {
    let model = CovarianceModel64::radial_power(1, 1.0, 1.0).unwrap();
    let sampler = make_gaussian(&model, &MultiIndex::splat(1, 1 << 14)).unwrap();
    let bx = IndexBox::prefix(&MultiIndex::splat(1, 1 << 12)).unwrap();
    let mut seed = 0u64;
    c.bench_function("gaussian_synthesis_16k_torus", |b| {
        b.iter_batched(
            || {
                seed += 1;
                seed
            },
            |s| sampler.sample(&bx, s).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_monte_carlo(c: &mut Criterion) {
    let sampler = make_iid::<f64>(1, 1.0, IidLaw::Normal).unwrap();
    let n = MultiIndex::splat(1, 1 << 12);
    let spec = NormalizationSpec::exact_variance();
    c.bench_function("normalized_sums_iid_4k_x_256", |b| {
        b.iter(|| normalized_sums(&sampler, &n, &spec, 256, 0).unwrap())
    });
}

criterion_group!(benches, bench_variance, bench_synthesis, bench_monte_carlo);
criterion_main!(benches);
