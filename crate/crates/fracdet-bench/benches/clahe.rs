//! Contrast-limited adaptive histogram equalization throughput at
//! radiograph-like sizes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fracdet_core::imgproc::{clahe, ClaheParams};
use fracdet_core::rng::SplitMix64;
use fracdet_testkit::gen::rand_gray;

fn bench_clahe(c: &mut Criterion) {
    let mut rng = SplitMix64::new(0xB_0003);
    for (w, h) in [(256u32, 256u32), (512, 512), (1024, 768)] {
        let img = rand_gray(&mut rng, w, h);
        let params = ClaheParams::default();
        c.bench_function(&format!("clahe_{w}x{h}_8x8"), |b| {
            b.iter(|| clahe(black_box(&img), black_box(&params)).unwrap())
        });
    }

    let img = rand_gray(&mut rng, 512, 512);
    let single_tile = ClaheParams {
        tiles_x: 1,
        tiles_y: 1,
        clip_limit: 256.0,
    };
    c.bench_function("clahe_512x512_global_he", |b| {
        b.iter(|| clahe(black_box(&img), black_box(&single_tile)).unwrap())
    });
}

criterion_group!(benches, bench_clahe);
criterion_main!(benches);
