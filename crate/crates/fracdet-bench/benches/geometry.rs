//! Box-arithmetic throughput: IoU, GIoU, and non-maximum suppression.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fracdet_core::geometry::{giou, iou, nms};
use fracdet_core::rng::SplitMix64;
use fracdet_testkit::gen::{rand_box, rand_detections};

fn bench_overlap(c: &mut Criterion) {
    let mut rng = SplitMix64::new(0xB_0001);
    let pairs: Vec<_> = (0..1024)
        .map(|_| (rand_box(&mut rng, false), rand_box(&mut rng, false)))
        .collect();

    c.bench_function("iou_1024_pairs", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for (p, q) in &pairs {
                acc += iou(black_box(p), black_box(q));
            }
            acc
        })
    });
    c.bench_function("giou_1024_pairs", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for (p, q) in &pairs {
                acc += giou(black_box(p), black_box(q)).unwrap_or(0.0);
            }
            acc
        })
    });
}

fn bench_nms(c: &mut Criterion) {
    let mut rng = SplitMix64::new(0xB_0002);
    for n in [32usize, 128, 512] {
        let dets = rand_detections(&mut rng, n, false, false, 1);
        c.bench_function(&format!("nms_{n}_boxes"), |b| {
            b.iter(|| nms(black_box(&dets), black_box(0.5)))
        });
    }
}

criterion_group!(benches, bench_overlap, bench_nms);
criterion_main!(benches);
