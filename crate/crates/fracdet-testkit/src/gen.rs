//! Seeded random input builders. Everything draws from the workspace's
//! own deterministic generator, so suites reproduce bit-for-bit across
//! platforms and runs.

use fracdet_core::geometry::{BBox, Detection};
use fracdet_core::imgproc::GrayImage;
use fracdet_core::loss::EmbeddingBatch;
use fracdet_core::metrics::{GtBox, ImageEval};
use fracdet_core::rng::SplitMix64;

pub fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// A random box: on a coarse 5-pixel grid (exercising exact ties) or
/// with two-decimal coordinates, inside a 100-unit extent.
pub fn rand_box(rng: &mut SplitMix64, coarse: bool) -> BBox {
    if coarse {
        BBox::new(
            rng.below(20) as f64 * 5.0,
            rng.below(20) as f64 * 5.0,
            (1 + rng.below(8)) as f64 * 5.0,
            (1 + rng.below(8)) as f64 * 5.0,
        )
    } else {
        BBox::new(
            round2(uniform(rng, 0.0, 90.0)),
            round2(uniform(rng, 0.0, 90.0)),
            round2(uniform(rng, 1.0, 40.0)),
            round2(uniform(rng, 1.0, 40.0)),
        )
    }
}

/// A score on a 16-step grid (quantized, exercising ties) or with four
/// decimals.
pub fn rand_score(rng: &mut SplitMix64, quantized: bool) -> f64 {
    if quantized {
        (1 + rng.below(16)) as f64 / 16.0
    } else {
        (rng.next_f64() * 10_000.0).round() / 10_000.0
    }
}

pub fn rand_detections(
    rng: &mut SplitMix64,
    n: usize,
    coarse: bool,
    quantized: bool,
    n_categories: u64,
) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            Detection::new(
                rand_box(rng, coarse),
                rand_score(rng, quantized),
                1 + rng.below(n_categories) as i64,
            )
        })
        .collect()
}

/// A random evaluation instance: 1-3 images, each with up to 11
/// detections and up to 5 ground truths, mixing coarse and fine boxes
/// and quantized and fine scores.
pub fn rand_image_evals(rng: &mut SplitMix64, n_categories: u64) -> Vec<ImageEval> {
    let n_images = 1 + rng.below(3);
    (0..n_images)
        .map(|idx| {
            let coarse = rng.next_f64() < 0.5;
            let quantized = rng.next_f64() < 0.5;
            let n_dets = rng.below(12) as usize;
            let n_gts = rng.below(6) as usize;
            ImageEval {
                image_id: idx as i64 + 1,
                dets: rand_detections(rng, n_dets, coarse, quantized, n_categories),
                gts: (0..n_gts)
                    .map(|_| GtBox {
                        bbox: rand_box(rng, coarse),
                        category_id: 1 + rng.below(n_categories) as i64,
                    })
                    .collect(),
            }
        })
        .collect()
}

pub fn rand_gray(rng: &mut SplitMix64, width: u32, height: u32) -> GrayImage {
    let pixels = (0..(width as usize * height as usize))
        .map(|_| rng.below(256) as u8)
        .collect();
    GrayImage::new(width, height, pixels).expect("positive dimensions")
}

/// A batch of unit-norm embeddings with labels drawn from `n_classes`.
pub fn rand_unit_batch(
    rng: &mut SplitMix64,
    n: usize,
    dim: usize,
    n_classes: u64,
) -> EmbeddingBatch {
    let mut vectors = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let mut v: Vec<f64> = (0..dim).map(|_| uniform(rng, -1.0, 1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            v[0] = 1.0;
            for x in v.iter_mut().skip(1) {
                *x = 0.0;
            }
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        vectors.extend(v);
    }
    let labels: Vec<i64> = (0..n).map(|_| rng.below(n_classes) as i64).collect();
    EmbeddingBatch::new(dim, vectors, labels).expect("normalized batch")
}

pub fn rand_logits(rng: &mut SplitMix64, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, -scale, scale)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_are_deterministic() {
        let a = rand_image_evals(&mut SplitMix64::derive(11, 0), 2);
        let b = rand_image_evals(&mut SplitMix64::derive(11, 0), 2);
        assert_eq!(a, b);
    }

    #[test]
    fn unit_batch_is_normalized() {
        let batch = rand_unit_batch(&mut SplitMix64::new(5), 8, 4, 3);
        for i in 0..batch.n() {
            let norm: f64 = batch.vector(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
