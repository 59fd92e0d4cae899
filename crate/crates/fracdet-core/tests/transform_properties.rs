//! Property tests for the image transforms: flips and quarter-turn
//! rotations are exact pixel permutations with consistent box algebra,
//! small-angle rotation and margin expansion respect image bounds, and
//! crops copy the rounded sub-rectangle.

use fracdet_core::geometry::{expand_with_margin, BBox, ImageBounds};
use fracdet_core::imgproc::{crop, hflip, rotate, GrayImage};
use proptest::prelude::*;

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    (1u32..24, 1u32..24)
        .prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), (w * h) as usize)
                .prop_map(move |px| GrayImage::new(w, h, px).unwrap())
        })
}

fn boxes_close(a: &[BBox], b: &[BBox]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(p, q)| {
            (p.x - q.x).abs() < 1e-9
                && (p.y - q.y).abs() < 1e-9
                && (p.w - q.w).abs() < 1e-9
                && (p.h - q.h).abs() < 1e-9
        })
}

proptest! {
    #[test]
    fn hflip_is_an_involution(img in image_strategy()) {
        let boxes = vec![BBox::new(0.25, 0.5, 1.0, 1.0)];
        let (once, b1) = hflip(&img, &boxes);
        let (twice, b2) = hflip(&once, &b1);
        prop_assert_eq!(twice.pixels(), img.pixels());
        prop_assert!(boxes_close(&b2, &boxes));
        prop_assert_eq!(once.width(), img.width());
        prop_assert_eq!(once.height(), img.height());
    }

    #[test]
    fn quarter_turns_compose(img in image_strategy()) {
        let boxes = vec![BBox::new(0.0, 0.0, 1.0, 1.0)];
        let (q1, b1) = rotate(&img, &boxes, 90.0).unwrap();
        let (q2, b2) = rotate(&q1, &b1, 90.0).unwrap();
        let (q3, b3) = rotate(&q2, &b2, 90.0).unwrap();
        let (q4, b4) = rotate(&q3, &b3, 90.0).unwrap();
        prop_assert_eq!(q4.pixels(), img.pixels());
        prop_assert!(boxes_close(&b4, &boxes));

        let (half, bh) = rotate(&img, &boxes, 180.0).unwrap();
        prop_assert_eq!(half.pixels(), q2.pixels());
        prop_assert!(boxes_close(&bh, &b2));

        let (three_quarters, bt) = rotate(&img, &boxes, 270.0).unwrap();
        prop_assert_eq!(three_quarters.pixels(), q3.pixels());
        prop_assert!(boxes_close(&bt, &b3));
    }

    #[test]
    fn small_rotation_preserves_dims_and_bounds(
        img in image_strategy(),
        angle in -15.0f64..15.0,
    ) {
        let boxes = vec![BBox::new(0.0, 0.0, 1.0, 1.0)];
        let (out, bs) = rotate(&img, &boxes, angle).unwrap();
        prop_assert_eq!(out.width(), img.width());
        prop_assert_eq!(out.height(), img.height());
        for b in &bs {
            prop_assert!(b.x >= 0.0 && b.y >= 0.0);
            prop_assert!(b.x + b.w <= img.width() as f64 + 1e-9);
            prop_assert!(b.y + b.h <= img.height() as f64 + 1e-9);
        }
    }

    #[test]
    fn rotation_outside_supported_angles_errors(angle in 15.1f64..89.9) {
        let img = GrayImage::filled(4, 4, 0).unwrap();
        prop_assert!(rotate(&img, &[], angle).is_err());
        prop_assert!(rotate(&img, &[], -angle).is_err());
    }

    #[test]
    fn margin_expansion_stays_in_bounds_and_contains_the_box(
        (w, h) in (8u32..64, 8u32..64),
        margin in 0.0f64..0.5,
        frac in (0.0f64..1.0, 0.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0),
    ) {
        let bounds = ImageBounds { width: w, height: h };
        let (wf, hf) = (w as f64, h as f64);
        let bw = frac.2 * wf;
        let bh = frac.3 * hf;
        let b = BBox::new(frac.0 * (wf - bw), frac.1 * (hf - bh), bw, bh);
        let e = expand_with_margin(&b, margin, bounds);
        prop_assert!(e.x >= 0.0 && e.y >= 0.0);
        prop_assert!(e.x + e.w <= wf + 1e-9);
        prop_assert!(e.y + e.h <= hf + 1e-9);
        // The input box lies inside the image, so it must survive whole.
        prop_assert!(e.x <= b.x + 1e-9 && e.y <= b.y + 1e-9);
        prop_assert!(e.x + e.w >= b.x + b.w - 1e-9);
        prop_assert!(e.y + e.h >= b.y + b.h - 1e-9);
    }

    #[test]
    fn crop_copies_the_rounded_rectangle(
        img in image_strategy(),
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
    ) {
        let (w, h) = (img.width(), img.height());
        let x = (fx * (w as f64 - 1.0)).floor();
        let y = (fy * (h as f64 - 1.0)).floor();
        let cw = (w as f64 - x).max(1.0).floor();
        let ch = (h as f64 - y).max(1.0).floor();
        let out = crop(&img, &BBox::new(x, y, cw, ch)).unwrap();
        prop_assert_eq!(out.width(), cw as u32);
        prop_assert_eq!(out.height(), ch as u32);
        prop_assert_eq!(out.get(0, 0), img.get(x as u32, y as u32));
        let (lx, ly) = (out.width() - 1, out.height() - 1);
        prop_assert_eq!(out.get(lx, ly), img.get(x as u32 + lx, y as u32 + ly));
    }
}

#[test]
fn full_image_crop_is_identity() {
    let img = GrayImage::from_fn(9, 5, |x, y| (x * 7 + y * 13) as u8).unwrap();
    let out = crop(&img, &BBox::new(0.0, 0.0, 9.0, 5.0)).unwrap();
    assert_eq!(out.pixels(), img.pixels());
}
