//! Loss-kernel throughput: supervised contrastive batches and
//! cross-entropy vectors at training-like sizes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fracdet_core::loss::{cross_entropy, supcon_loss, Temperature};
use fracdet_core::rng::SplitMix64;
use fracdet_testkit::gen::{rand_logits, rand_unit_batch};

fn bench_supcon(c: &mut Criterion) {
    let mut rng = SplitMix64::new(0xB_0005);
    for (n, dim) in [(16usize, 64usize), (64, 128), (256, 128)] {
        let batch = rand_unit_batch(&mut rng, n, dim, 8);
        let tau = Temperature::default();
        c.bench_function(&format!("supcon_n{n}_d{dim}"), |b| {
            b.iter(|| supcon_loss(black_box(&batch), black_box(tau)).unwrap())
        });
    }
}

fn bench_cross_entropy(c: &mut Criterion) {
    let mut rng = SplitMix64::new(0xB_0006);
    for n in [14usize, 256, 4096] {
        let logits = rand_logits(&mut rng, n, 10.0);
        c.bench_function(&format!("cross_entropy_{n}_logits"), |b| {
            b.iter(|| cross_entropy(black_box(&logits), black_box(0)).unwrap())
        });
    }
}

criterion_group!(benches, bench_supcon, bench_cross_entropy);
criterion_main!(benches);
