//! Randomized verification suites comparing the production kernels
//! against the brute-force references in [`crate::oracle`]. Each check
//! returns a one-line summary on success or a diagnostic on the first
//! divergence, so callers can surface them as pass/fail gate lines.

use fracdet_core::coco::{
    parse_dataset, parse_results, serialize_dataset, serialize_results,
};
use fracdet_core::geometry::{giou, iou, nms, Detection};
use fracdet_core::imgproc::{clahe, ClaheParams, GrayImage};
use fracdet_core::loss::{cross_entropy, supcon_loss, EmbeddingBatch, Temperature};
use fracdet_core::metrics::{average_precision, mean_ap, GtBox, ImageEval, MetricsError};
use fracdet_core::pipeline::{
    corpus_from_manifest, evaluate_corpus, parse_corpus_manifest, parse_crop_labels,
    serialize_crop_labels, FileClassifierBackend, FileDetectorBackend, MemorySource,
    PipelineConfig,
};
use fracdet_core::rng::SplitMix64;

use crate::corpora;
use crate::gen;
use crate::oracle;

pub type CheckResult = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// iou/giou against corner-arithmetic references (1e-12) and NMS keep
/// sets against selection-and-deletion NMS (exact set identity), on
/// `instances` random box collections of up to 20 boxes, including
/// zero-area boxes and exact score/box ties.
pub fn geometry_oracle(seed: u64, instances: usize) -> CheckResult {
    let mut rng = SplitMix64::derive(seed, 101);
    let thresholds = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let n = rng.below(21) as usize;
        let coarse = rng.next_f64() < 0.5;
        let quantized = rng.next_f64() < 0.5;
        let mut dets = gen::rand_detections(&mut rng, n, coarse, quantized, 3);
        for d in dets.iter_mut() {
            if rng.below(12) == 0 {
                d.bbox.w = 0.0;
            }
            if rng.below(12) == 0 {
                d.bbox.h = 0.0;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&dets[i].bbox, &dets[j].bbox);
                let err = (iou(a, b) - oracle::ref_iou(a, b)).abs();
                worst = worst.max(err);
                ensure(err <= 1e-12, || {
                    format!("instance {inst}: iou({a:?}, {b:?}) off by {err:e}")
                })?;
                match (giou(a, b), oracle::ref_giou(a, b)) {
                    (Ok(v), Some(r)) => {
                        let err = (v - r).abs();
                        worst = worst.max(err);
                        ensure(err <= 1e-12, || {
                            format!("instance {inst}: giou({a:?}, {b:?}) off by {err:e}")
                        })?;
                    }
                    (Err(_), None) => {}
                    (got, want) => {
                        return Err(format!(
                            "instance {inst}: giou degenerate-box disagreement: \
                             production {got:?}, reference {want:?}"
                        ));
                    }
                }
            }
        }
        let thr = thresholds[rng.below(thresholds.len() as u64) as usize];
        let kept = nms(&dets, thr);
        let ref_kept: Vec<Detection> = oracle::ref_nms(&dets, thr)
            .into_iter()
            .map(|i| dets[i].clone())
            .collect();
        let key = |d: &Detection| {
            (
                d.score.to_bits(),
                d.bbox.x.to_bits(),
                d.bbox.y.to_bits(),
                d.bbox.w.to_bits(),
                d.bbox.h.to_bits(),
                d.category_id,
            )
        };
        let mut got: Vec<_> = kept.iter().map(key).collect();
        let mut want: Vec<_> = ref_kept.iter().map(key).collect();
        got.sort_unstable();
        want.sort_unstable();
        ensure(got == want, || {
            format!(
                "instance {inst}: nms({thr}) keep sets diverge, {} vs {} kept",
                kept.len(),
                ref_kept.len()
            )
        })?;
        ensure(kept.windows(2).all(|w| w[0].score >= w[1].score), || {
            format!("instance {inst}: nms output not in descending score order")
        })?;
    }
    Ok(format!(
        "{instances} instances, worst iou/giou deviation {worst:.1e}, all NMS keep sets identical"
    ))
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

fn instance(rng: &mut SplitMix64) -> Vec<ImageEval> {
    let n_categories = 1 + rng.below(3);
    gen::rand_image_evals(rng, n_categories)
}

/// Compares production AP against the exhaustive prefix-re-match oracle
/// at IoU 0.50 and 0.75 on `instances` instances with ground truth
/// (tolerance 1e-9), the full mAP sweep against its oracle on every
/// tenth instance, and the worked example against 0.8350 at four
/// decimals.
pub fn ap_oracle(seed: u64, instances: usize) -> CheckResult {
    let mut rng = SplitMix64::derive(seed, 202);
    let mut checked = 0usize;
    let mut attempts = 0usize;
    let mut worst = 0.0f64;
    while checked < instances {
        attempts += 1;
        ensure(attempts < instances * 8, || {
            "generator kept producing ground-truth-free instances".to_string()
        })?;
        let images = instance(&mut rng);
        let has_gts = images.iter().any(|i| !i.gts.is_empty());
        for thr in [0.5, 0.75] {
            match (average_precision(&images, thr), oracle::ref_average_precision(&images, thr)) {
                (Ok(v), Some(r)) => {
                    let err = (v - r).abs();
                    worst = worst.max(err);
                    ensure(err <= 1e-9, || {
                        format!("AP@{thr} diverged from oracle by {err:e} on attempt {attempts}")
                    })?;
                }
                (Err(MetricsError::NoGroundTruth), None) => {}
                (got, want) => {
                    return Err(format!(
                        "AP@{thr} emptiness disagreement: production {got:?}, oracle {want:?}"
                    ));
                }
            }
        }
        if has_gts && checked % 10 == 0 {
            let v = mean_ap(&images).map_err(|e| e.to_string())?;
            let r = oracle::ref_mean_ap(&images).expect("instance has ground truth");
            let err = (v - r).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9, || {
                format!("mAP diverged from oracle by {err:e} on attempt {attempts}")
            })?;
        }
        if has_gts {
            checked += 1;
        }
    }

    // Worked example: three detections at 0.9/0.8/0.7, two ground
    // truths; the 0.8 detection is a false positive between two hits.
    let worked = vec![ImageEval {
        image_id: 1,
        dets: vec![
            Detection::new(fracdet_core::geometry::BBox::new(0.0, 0.0, 10.0, 10.0), 0.9, 1),
            Detection::new(fracdet_core::geometry::BBox::new(50.0, 50.0, 10.0, 10.0), 0.8, 1),
            Detection::new(fracdet_core::geometry::BBox::new(20.0, 20.0, 10.0, 10.0), 0.7, 1),
        ],
        gts: vec![
            GtBox {
                bbox: fracdet_core::geometry::BBox::new(0.0, 0.0, 10.0, 10.0),
                category_id: 1,
            },
            GtBox {
                bbox: fracdet_core::geometry::BBox::new(20.0, 20.0, 10.0, 10.0),
                category_id: 1,
            },
        ],
    }];
    let ap = average_precision(&worked, 0.5).map_err(|e| e.to_string())?;
    let oracle_ap = oracle::ref_average_precision(&worked, 0.5).expect("has ground truth");
    ensure((ap - oracle_ap).abs() <= 1e-9, || {
        format!("worked example diverges from oracle: {ap} vs {oracle_ap}")
    })?;
    ensure((ap * 1e4).round() == 8350.0, || {
        format!("worked example AP {ap:.6} does not round to 0.8350")
    })?;
    Ok(format!(
        "{checked} instances at IoU 0.50/0.75 plus mAP sweeps, worst deviation {worst:.1e}; \
         worked example AP {ap:.4}"
    ))
}

/// AP@75 ≤ AP@50 and mAP ≤ AP@50 on every generated instance, and AP
/// exactly invariant under three strictly monotone score transforms.
pub fn ap_monotonicity(seed: u64, instances: usize) -> CheckResult {
    let mut rng = SplitMix64::derive(seed, 303);
    let mut checked = 0usize;
    let mut attempts = 0usize;
    let transforms: [(&str, fn(f64) -> f64); 3] = [
        ("affine", |s| 0.5 * s + 0.25),
        ("cube", |s| s * s * s),
        ("rational", |s| s / (1.0 + s)),
    ];
    while checked < instances {
        attempts += 1;
        ensure(attempts < instances * 8, || {
            "generator kept producing ground-truth-free instances".to_string()
        })?;
        let images = instance(&mut rng);
        if !images.iter().any(|i| !i.gts.is_empty()) {
            continue;
        }
        checked += 1;
        let ap50 = average_precision(&images, 0.5).map_err(|e| e.to_string())?;
        let ap75 = average_precision(&images, 0.75).map_err(|e| e.to_string())?;
        let map = mean_ap(&images).map_err(|e| e.to_string())?;
        ensure(ap75 <= ap50 + 1e-12, || {
            format!("AP@75 {ap75} exceeds AP@50 {ap50} on attempt {attempts}")
        })?;
        ensure(map <= ap50 + 1e-12, || {
            format!("mAP {map} exceeds AP@50 {ap50} on attempt {attempts}")
        })?;
        for (name, f) in transforms {
            let transformed: Vec<ImageEval> = images
                .iter()
                .map(|img| ImageEval {
                    image_id: img.image_id,
                    dets: img
                        .dets
                        .iter()
                        .map(|d| Detection::new(d.bbox, f(d.score), d.category_id))
                        .collect(),
                    gts: img.gts.clone(),
                })
                .collect();
            let t50 = average_precision(&transformed, 0.5).map_err(|e| e.to_string())?;
            let t75 = average_precision(&transformed, 0.75).map_err(|e| e.to_string())?;
            ensure(t50 == ap50 && t75 == ap75, || {
                format!(
                    "AP not invariant under {name} transform: \
                     {ap50}/{ap75} became {t50}/{t75}"
                )
            })?;
        }
    }
    Ok(format!(
        "{checked} instances: AP@75 ≤ AP@50 and mAP ≤ AP@50 throughout; \
         AP bit-identical under 3 monotone score transforms"
    ))
}

// ---------------------------------------------------------------------------
// Loss kernels
// ---------------------------------------------------------------------------

fn permuted(batch: &EmbeddingBatch, rng: &mut SplitMix64) -> EmbeddingBatch {
    let mut order: Vec<usize> = (0..batch.n()).collect();
    rng.shuffle(&mut order);
    let mut vectors = Vec::with_capacity(batch.n() * batch.dim());
    let mut labels = Vec::with_capacity(batch.n());
    for &i in &order {
        vectors.extend_from_slice(batch.vector(i));
        labels.push(batch.label(i));
    }
    EmbeddingBatch::new(batch.dim(), vectors, labels).expect("permutation preserves validity")
}

fn rotated(batch: &EmbeddingBatch, rng: &mut SplitMix64) -> EmbeddingBatch {
    let (n, dim) = (batch.n(), batch.dim());
    let mut vectors: Vec<f64> = (0..n).flat_map(|i| batch.vector(i).to_vec()).collect();
    let labels: Vec<i64> = (0..n).map(|i| batch.label(i)).collect();
    for _ in 0..dim + 1 {
        let a = rng.below(dim as u64) as usize;
        let mut b = rng.below(dim as u64 - 1) as usize;
        if b >= a {
            b += 1;
        }
        let theta = gen::uniform(rng, 0.0, std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        for i in 0..n {
            let va = vectors[i * dim + a];
            let vb = vectors[i * dim + b];
            vectors[i * dim + a] = c * va - s * vb;
            vectors[i * dim + b] = s * va + c * vb;
        }
    }
    EmbeddingBatch::new(dim, vectors, labels).expect("rotation preserves norms")
}

/// SupCon against the naive double-sum oracle, plus permutation and
/// rotation invariance, on `batches` random batches (n ≤ 16, dim ≤ 8);
/// cross-entropy against the compensated-summation reference on logits
/// up to magnitude 1000, including the degenerate 1000-vs-0 case.
pub fn loss_oracle(seed: u64, batches: usize) -> CheckResult {
    let mut rng = SplitMix64::derive(seed, 404);
    let taus = [0.07, 0.5, 1.0];
    let scales = [1.0, 10.0, 1000.0];
    let mut worst = 0.0f64;
    for batch_idx in 0..batches {
        let n = 2 + rng.below(15) as usize;
        let dim = 1 + rng.below(8) as usize;
        let classes = 1 + rng.below(4);
        let batch = gen::rand_unit_batch(&mut rng, n, dim, classes);
        let tau = taus[rng.below(taus.len() as u64) as usize];
        let t = Temperature::new(tau).expect("positive");
        match (supcon_loss(&batch, t), oracle::ref_supcon(&batch, tau)) {
            (Ok(v), Some(r)) => {
                let err = (v - r).abs();
                worst = worst.max(err);
                ensure(err <= 1e-9, || {
                    format!("batch {batch_idx}: supcon diverged from oracle by {err:e}")
                })?;
                let p = supcon_loss(&permuted(&batch, &mut rng), t).map_err(|e| e.to_string())?;
                let perr = (p - v).abs();
                worst = worst.max(perr);
                ensure(perr <= 1e-9, || {
                    format!("batch {batch_idx}: supcon changed by {perr:e} under permutation")
                })?;
                if dim >= 2 {
                    let q =
                        supcon_loss(&rotated(&batch, &mut rng), t).map_err(|e| e.to_string())?;
                    let qerr = (q - v).abs();
                    worst = worst.max(qerr);
                    ensure(qerr <= 1e-9, || {
                        format!("batch {batch_idx}: supcon changed by {qerr:e} under rotation")
                    })?;
                }
            }
            (Err(_), None) => {}
            (got, want) => {
                return Err(format!(
                    "batch {batch_idx}: supcon positives disagreement: \
                     production {got:?}, oracle {want:?}"
                ));
            }
        }

        let scale = scales[rng.below(scales.len() as u64) as usize];
        let n_logits = 2 + rng.below(8) as usize;
        let logits = gen::rand_logits(&mut rng, n_logits, scale);
        let class = rng.below(logits.len() as u64) as usize;
        let v = cross_entropy(&logits, class).map_err(|e| e.to_string())?;
        let err = (v - oracle::ref_cross_entropy(&logits, class)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || {
            format!("batch {batch_idx}: cross-entropy diverged from reference by {err:e}")
        })?;
    }
    for class in [0, 1] {
        let v = cross_entropy(&[1000.0, 0.0], class).map_err(|e| e.to_string())?;
        let r = oracle::ref_cross_entropy(&[1000.0, 0.0], class);
        ensure(v.is_finite() && (v - r).abs() <= 1e-9, || {
            format!("logit-1000 case class {class}: got {v}, reference {r}")
        })?;
    }
    Ok(format!(
        "{batches} batches: supcon/permutation/rotation and cross-entropy all within 1e-9 \
         (worst {worst:.1e}), logit-1000 case stable"
    ))
}

// ---------------------------------------------------------------------------
// CLAHE
// ---------------------------------------------------------------------------

/// Constant images stay exactly constant under any parameters, and the
/// single-tile non-clipping configuration reproduces plain global
/// histogram equalization byte-for-byte on `images` random images.
pub fn clahe_oracle(seed: u64, images: usize) -> CheckResult {
    let param_sets = [
        ClaheParams::default(),
        ClaheParams {
            tiles_x: 1,
            tiles_y: 1,
            clip_limit: 256.0,
        },
        ClaheParams {
            tiles_x: 4,
            tiles_y: 2,
            clip_limit: 1.0,
        },
    ];
    for &value in &[0u8, 1, 7, 128, 200, 254, 255] {
        for (w, h) in [(32u32, 32u32), (17, 13), (40, 25)] {
            let img = GrayImage::filled(w, h, value).expect("positive dimensions");
            for p in &param_sets {
                let out = clahe(&img, p).map_err(|e| e.to_string())?;
                let first = out.pixels()[0];
                ensure(out.pixels().iter().all(|&px| px == first), || {
                    format!(
                        "constant {value} image ({w}x{h}) not constant after CLAHE {p:?}"
                    )
                })?;
            }
        }
    }

    let single_tile = ClaheParams {
        tiles_x: 1,
        tiles_y: 1,
        clip_limit: 256.0,
    };
    let mut rng = SplitMix64::derive(seed, 505);
    for idx in 0..images {
        let w = 1 + rng.below(64) as u32;
        let h = 1 + rng.below(64) as u32;
        let img = gen::rand_gray(&mut rng, w, h);
        let out = clahe(&img, &single_tile).map_err(|e| e.to_string())?;
        let want = oracle::ref_global_hist_eq(&img);
        ensure(out.pixels() == want.pixels(), || {
            format!("image {idx} ({w}x{h}): single-tile CLAHE differs from global HE")
        })?;
    }
    Ok(format!(
        "constant images fixed under 3 parameter sets; single-tile CLAHE equals global HE \
         on {images} random images"
    ))
}

// ---------------------------------------------------------------------------
// Pipeline conservation
// ---------------------------------------------------------------------------

/// Runs the full corpus pipeline over a randomized fixture and verifies,
/// for every image, that the stage counters sum back to the raw
/// detection count and that no surviving detection carries the normal
/// label.
pub fn stage_conservation(seed: u64, n_images: usize) -> CheckResult {
    let fixture = corpora::conservation_fixture(seed, n_images);
    let mut detector = FileDetectorBackend::new(fixture.detections.clone());
    let mut classifier = corpora::RuleClassifierBackend::new(seed ^ 0x5EED);
    let cfg = PipelineConfig::default();
    let eval = evaluate_corpus(
        &fixture.corpus,
        &fixture.source,
        &mut detector,
        &mut classifier,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    ensure(eval.failures.is_empty(), || {
        format!("{} images failed: {:?}", eval.failures.len(), eval.failures[0])
    })?;
    ensure(eval.per_image.len() == n_images, || {
        format!("expected {n_images} results, got {}", eval.per_image.len())
    })?;
    let mut surviving = 0usize;
    let mut discarded = 0usize;
    for r in &eval.per_image {
        let raw = fixture.raw_counts[&r.image_id];
        ensure(r.raw_count() == raw, || {
            format!(
                "image {}: counters sum to {} but {} detections went in \
                 (below {}, truncated {}, nms {}, normal {}, surviving {})",
                r.image_id,
                r.raw_count(),
                raw,
                r.below_threshold,
                r.truncated,
                r.nms_suppressed,
                r.discarded_normal,
                r.surviving.len()
            )
        })?;
        for s in &r.surviving {
            ensure(s.label != cfg.normal_label, || {
                format!("image {}: a {:?}-labeled crop survived", r.image_id, s.label)
            })?;
        }
        surviving += r.surviving.len();
        discarded += r.discarded_normal;
    }
    ensure(discarded > 0, || {
        "fixture produced no normal-labeled crops; discard rule untested".to_string()
    })?;
    Ok(format!(
        "{n_images} images conserved ({surviving} survivors, {discarded} normal crops \
         discarded, none surviving)"
    ))
}

// ---------------------------------------------------------------------------
// Hand-traced corpus parity
// ---------------------------------------------------------------------------

/// Runs the hand-traced three-image corpus through the library pipeline
/// and compares every number against the hand-derived expectations.
pub fn corpus_trace() -> CheckResult {
    let c = corpora::three_image_corpus();
    let e = &c.expect;
    let rows = parse_corpus_manifest(&c.manifest).map_err(|e| e.to_string())?;
    let corpus = corpus_from_manifest(&rows, Some(&c.gt)).map_err(|e| e.to_string())?;
    let mut source = MemorySource::new();
    for (i, (_, img)) in c.images.iter().enumerate() {
        source.insert(i as i64 + 1, img.clone());
    }
    let mut detector = FileDetectorBackend::new(c.detections.clone());
    let mut classifier = FileClassifierBackend::new(c.crop_labels.clone());
    let cfg = PipelineConfig::default();
    let eval = evaluate_corpus(&corpus, &source, &mut detector, &mut classifier, &cfg)
        .map_err(|e| e.to_string())?;

    ensure(eval.failures.is_empty(), || format!("failures: {:?}", eval.failures))?;
    let by_id = |id: i64| eval.per_image.iter().find(|r| r.image_id == id).unwrap();

    let img1 = by_id(1);
    ensure(
        img1.below_threshold == 1
            && img1.nms_suppressed == 1
            && img1.truncated == 0
            && img1.discarded_normal == 0
            && img1.surviving.len() == 1,
        || format!("image 1 stage counts wrong: {img1:?}"),
    )?;
    let s = &img1.surviving[0];
    ensure(
        s.bbox == e.survivor_bbox
            && s.score == e.survivor_score
            && s.label == e.survivor_label
            && s.probability == e.survivor_probability
            && s.crop_box == e.survivor_crop,
        || format!("image 1 survivor wrong: {s:?}"),
    )?;
    let img2 = by_id(2);
    ensure(
        img2.discarded_normal == 1 && img2.surviving.is_empty() && img2.raw_count() == 1,
        || format!("image 2 stage counts wrong: {img2:?}"),
    )?;
    let img3 = by_id(3);
    ensure(img3.raw_count() == 0, || {
        format!("image 3 should be empty: {img3:?}")
    })?;

    let i = &eval.image_summary;
    ensure(
        i.true_pos == 1 && i.false_pos == 0 && i.true_neg == 1 && i.false_neg == 1,
        || format!("image-level confusion wrong: {i:?}"),
    )?;
    ensure(
        i.accuracy == e.accuracy && i.precision == e.precision && i.recall == e.recall,
        || format!("image-level rates wrong: {i:?}"),
    )?;

    let d = eval.det_summary.as_ref().ok_or("detection summary missing")?;
    ensure(d.ap50 == e.ap50 && d.ap75 == e.ap75, || {
        format!("AP wrong: ap50 {} want {}, ap75 {} want {}", d.ap50, e.ap50, d.ap75, e.ap75)
    })?;
    ensure((d.map - e.map).abs() <= 1e-15, || {
        format!("mAP {} want {}", d.map, e.map)
    })?;
    ensure(d.ar100 == e.ar100, || format!("AR@100 {} want {}", d.ar100, e.ar100))?;
    ensure(
        d.precision_at_conf == e.op_precision && d.recall_at_conf == e.op_recall,
        || {
            format!(
                "operating point ({}, {}) want ({}, {})",
                d.precision_at_conf, d.recall_at_conf, e.op_precision, e.op_recall
            )
        },
    )?;
    Ok(format!(
        "3-image corpus: survivor, stage counts, AP@50 {:.4}, accuracy {:.4}, \
         precision {:.4}, recall {:.4} all match the hand trace",
        d.ap50, i.accuracy, i.precision, i.recall
    ))
}

// ---------------------------------------------------------------------------
// Serialization round trips
// ---------------------------------------------------------------------------

/// parse ∘ serialize identity on the fixture documents: a second
/// parse/serialize cycle must reproduce the first byte-for-byte.
pub fn roundtrip_stability(seed: u64) -> CheckResult {
    let three = corpora::three_image_corpus();
    let datasets = [
        ("three-image ground truth", three.gt.clone()),
        ("37-category corpus", corpora::thirty_seven_category_corpus(seed)),
        ("full-distribution dataset", corpora::table1_dataset()),
    ];
    let mut bytes = 0usize;
    for (name, d) in &datasets {
        let once = serialize_dataset(d);
        let reparsed = parse_dataset(&once).map_err(|e| format!("{name}: {e}"))?;
        let twice = serialize_dataset(&reparsed);
        ensure(once == twice, || format!("{name}: dataset round trip not byte-stable"))?;
        ensure(reparsed == *d, || format!("{name}: dataset round trip lost data"))?;
        bytes += once.len();
    }
    let results = serialize_results(&three.detections);
    let back = parse_results(&results).map_err(|e| e.to_string())?;
    ensure(serialize_results(&back) == results, || {
        "detection results round trip not byte-stable".to_string()
    })?;
    let labels = serialize_crop_labels(&three.crop_labels);
    let back = parse_crop_labels(&labels).map_err(|e| e.to_string())?;
    ensure(serialize_crop_labels(&back) == labels, || {
        "crop labels round trip not byte-stable".to_string()
    })?;
    Ok(format!(
        "{} documents ({bytes} bytes of datasets) byte-stable through parse/serialize",
        datasets.len() + 2
    ))
}
