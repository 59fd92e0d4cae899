//! Brute-force reference implementations, structured differently from
//! the production code on purpose: selection loops instead of sorts,
//! prefix re-matching instead of cumulative flags, linear scans instead
//! of envelopes.

use fracdet_core::geometry::{BBox, Detection};
use fracdet_core::imgproc::GrayImage;
use fracdet_core::loss::EmbeddingBatch;
use fracdet_core::metrics::ImageEval;

/// IoU by explicit corner arithmetic.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// GIoU by explicit corner arithmetic; `None` when both boxes have zero
/// area (the production code errors there).
pub fn ref_giou(a: &BBox, b: &BBox) -> Option<f64> {
    if a.w * a.h <= 0.0 && b.w * b.h <= 0.0 {
        return None;
    }
    let hull_w = (a.x + a.w).max(b.x + b.w) - a.x.min(b.x);
    let hull_h = (a.y + a.h).max(b.y + b.h) - a.y.min(b.y);
    let hull = hull_w * hull_h;
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    Some(iou - (hull - union) / hull)
}

/// Picks the not-yet-visited detection with the highest score (ties:
/// lowest index) by linear scan.
fn next_by_score(dets: &[Detection], visited: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..dets.len() {
        if visited[i] {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if dets[i].score > dets[b].score => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Greedy NMS as repeated selection plus deletion: take the best
/// remaining detection, keep it, delete every remaining detection whose
/// IoU with it reaches the threshold. Returns kept input indices in
/// selection order.
pub fn ref_nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut gone = vec![false; dets.len()];
    let mut kept = Vec::new();
    while let Some(i) = next_by_score(dets, &gone) {
        gone[i] = true;
        kept.push(i);
        for j in 0..dets.len() {
            if !gone[j] && ref_iou(&dets[i].bbox, &dets[j].bbox) >= iou_threshold {
                gone[j] = true;
            }
        }
    }
    kept
}

/// Greedy matching by repeated selection: per detection in score order,
/// claim the unmatched ground truth with the highest IoU at or above the
/// threshold (ties: lowest index). Returns per-detection matched
/// ground-truth indices.
pub fn ref_match(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> Vec<Option<usize>> {
    let mut visited = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    let mut matched = vec![None; dets.len()];
    while let Some(d) = next_by_score(dets, &visited) {
        visited[d] = true;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let ov = ref_iou(&dets[d].bbox, gt);
            if ov < iou_threshold {
                continue;
            }
            if best.map_or(true, |(_, bv)| ov > bv) {
                best = Some((g, ov));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[d] = Some(g);
        }
    }
    matched
}

/// 101-point interpolated AP by linear scan: for each sample recall,
/// the best precision among curve points at or beyond it.
fn ref_ap_101(points: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for s in 0..=100u32 {
        let r = f64::from(s) / 100.0;
        let mut best = 0.0f64;
        for &(recall, precision) in points {
            if recall >= r && precision > best {
                best = precision;
            }
        }
        total += best;
    }
    total / 101.0
}

/// One category's AP by exhaustive cutoff sweep: for every prefix k of
/// the pooled order (score descending, then image id, then detection
/// index), re-match the top-k detections from scratch and record the
/// (recall, precision) point.
fn ref_category_ap(images: &[ImageEval], category_id: i64, iou_threshold: f64) -> f64 {
    // Pooled keys; selection sort keeps the tie-breaking explicit.
    let mut keys: Vec<(f64, i64, usize)> = Vec::new();
    let mut total_gts = 0usize;
    for img in images {
        for (idx, d) in img.dets.iter().enumerate() {
            if d.category_id == category_id {
                keys.push((d.score, img.image_id, idx));
            }
        }
        total_gts += img
            .gts
            .iter()
            .filter(|g| g.category_id == category_id)
            .count();
    }
    let mut order: Vec<usize> = Vec::new();
    let mut used = vec![false; keys.len()];
    for _ in 0..keys.len() {
        let mut best: Option<usize> = None;
        for (i, k) in keys.iter().enumerate() {
            if used[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let kb = &keys[b];
                    k.0 > kb.0 || (k.0 == kb.0 && (k.1, k.2) < (kb.1, kb.2))
                }
            };
            if better {
                best = Some(i);
            }
        }
        let b = best.expect("one unused key remains");
        used[b] = true;
        order.push(b);
    }
    let mut points = Vec::new();
    for k in 1..=order.len() {
        let head = &order[..k];
        let mut tp = 0usize;
        for img in images {
            let sub: Vec<Detection> = head
                .iter()
                .map(|&i| keys[i])
                .filter(|&(_, id, _)| id == img.image_id)
                .map(|(_, _, idx)| img.dets[idx].clone())
                .collect();
            let gts: Vec<BBox> = img
                .gts
                .iter()
                .filter(|g| g.category_id == category_id)
                .map(|g| g.bbox)
                .collect();
            tp += ref_match(&sub, &gts, iou_threshold)
                .iter()
                .filter(|m| m.is_some())
                .count();
        }
        points.push((tp as f64 / total_gts as f64, tp as f64 / k as f64));
    }
    ref_ap_101(&points)
}

/// Mean AP over categories with at least one ground truth; `None` when
/// there are none.
pub fn ref_average_precision(images: &[ImageEval], iou_threshold: f64) -> Option<f64> {
    let mut cats: Vec<i64> = images
        .iter()
        .flat_map(|i| i.gts.iter().map(|g| g.category_id))
        .collect();
    cats.sort_unstable();
    cats.dedup();
    if cats.is_empty() {
        return None;
    }
    let total: f64 = cats
        .iter()
        .map(|&c| ref_category_ap(images, c, iou_threshold))
        .sum();
    Some(total / cats.len() as f64)
}

pub fn ref_mean_ap(images: &[ImageEval]) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in (50..=95).step_by(5) {
        total += ref_average_precision(images, f64::from(t) / 100.0)?;
        count += 1;
    }
    Some(total / count as f64)
}

/// Global histogram equalization: `lut[v] = round(255 * cdf[v] / N)`.
pub fn ref_global_hist_eq(img: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let n = img.pixels().len() as f64;
    let mut lut = [0u8; 256];
    let mut cum = 0u64;
    for v in 0..256 {
        cum += hist[v];
        lut[v] = (255.0 * cum as f64 / n).round() as u8;
    }
    let pixels = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("same dimensions")
}

/// Supervised contrastive loss by the naive double sum, no
/// stabilization: mean over anchors with positives of
/// `-(1/|P|) Σ_p ln(exp(s_ip) / Σ_{a≠i} exp(s_ia))`.
pub fn ref_supcon(batch: &EmbeddingBatch, tau: f64) -> Option<f64> {
    let n = batch.n();
    let sim = |i: usize, j: usize| -> f64 {
        batch
            .vector(i)
            .iter()
            .zip(batch.vector(j))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / tau
    };
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && batch.label(p) == batch.label(i))
            .collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| sim(i, a).exp()).sum();
        let inner: f64 = positives
            .iter()
            .map(|&p| (sim(i, p).exp() / denom).ln())
            .sum();
        total += -inner / positives.len() as f64;
        anchors += 1;
    }
    if anchors == 0 {
        None
    } else {
        Some(total / anchors as f64)
    }
}

/// Cross entropy with Neumaier-compensated summation and `ln_1p` around
/// the leading exponential term.
pub fn ref_cross_entropy(logits: &[f64], true_class: usize) -> f64 {
    let mut arg_max = 0usize;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[arg_max] {
            arg_max = i;
        }
    }
    let m = logits[arg_max];
    // Compensated sum of exp(l - m) over everything except the chosen
    // maximum (whose term is exactly 1).
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (i, &l) in logits.iter().enumerate() {
        if i == arg_max {
            continue;
        }
        let term = (l - m).exp();
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    let lse = m + (sum + comp).ln_1p();
    lse - logits[true_class]
}

/// L1 loss over normalized center-form coordinates.
pub fn ref_l1_bbox(pred: &BBox, gt: &BBox, width: u32, height: u32) -> f64 {
    let cf = |b: &BBox| {
        [
            (b.x + b.w / 2.0) / f64::from(width),
            (b.y + b.h / 2.0) / f64::from(height),
            b.w / f64::from(width),
            b.h / f64::from(height),
        ]
    };
    let p = cf(pred);
    let g = cf(gt);
    p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum()
}
