//! Detection and classification evaluation: greedy matching, 101-point
//! interpolated average precision (AP@50/AP@75/mAP), AR@100, operating-point
//! precision/recall, per-class reports, and image-level fracture metrics.
//!
//! All metrics are deterministic and independent of the order images are
//! supplied in: cross-image tie-breaking uses image ids, never slice
//! positions.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox, Detection};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined: no ground-truth boxes in the evaluation set")]
    NoGroundTruth,
    #[error("label {label:?} is not in the class set")]
    UnknownLabel { label: String },
    #[error("true and predicted label counts differ: {truth} vs {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("image id {0} appears more than once in the evaluation set")]
    DuplicateImageId(i64),
}

/// A ground-truth box with its category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    pub category_id: i64,
}

/// One image's detections and ground truths. `image_id` breaks score ties
/// when detections are pooled across images, keeping every metric
/// independent of iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub image_id: i64,
    pub dets: Vec<Detection>,
    pub gts: Vec<GtBox>,
}

/// Per-detection match outcome; `matched_gt` indexes into the ground-truth
/// list, `iou` is the overlap achieved by the match (0 for false
/// positives).
#[derive(Debug, Clone, PartialEq)]
pub struct DetMatch {
    pub matched_gt: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub detections: Vec<DetMatch>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.detections.iter().filter(|d| d.matched_gt.is_some()).count()
    }
}

/// Greedy single-image matching: detections in descending score order
/// (ties by input index) claim the unmatched ground truth with the highest
/// IoU ≥ threshold (IoU ties go to the lowest ground-truth index); each
/// ground truth is claimed at most once. Category-blind — callers group
/// by category first when categories matter.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut result = MatchResult {
        detections: vec![
            DetMatch {
                matched_gt: None,
                iou: 0.0
            };
            dets.len()
        ],
        gt_matched: vec![false; gts.len()],
    };
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if result.gt_matched[g] {
                continue;
            }
            let overlap = iou(&dets[d].bbox, gt);
            if overlap < iou_threshold {
                continue;
            }
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, overlap)) = best {
            result.gt_matched[g] = true;
            result.detections[d] = DetMatch {
                matched_gt: Some(g),
                iou: overlap,
            };
        }
    }
    result
}

/// Precision-recall points ordered by descending confidence cutoff;
/// recall is non-decreasing along the sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PRCurve {
    pub points: Vec<(f64, f64)>,
}

fn check_unique_ids(images: &[ImageEval]) -> Result<(), MetricsError> {
    let mut seen = HashSet::new();
    for img in images {
        if !seen.insert(img.image_id) {
            return Err(MetricsError::DuplicateImageId(img.image_id));
        }
    }
    Ok(())
}

fn gt_categories(images: &[ImageEval]) -> BTreeSet<i64> {
    images
        .iter()
        .flat_map(|i| i.gts.iter().map(|g| g.category_id))
        .collect()
}

/// Pooled, score-sorted TP/FP flags for one category. Sort key is
/// (score desc, image id asc, detection input index asc); the per-image
/// flags come from [`match_detections`] on that category's boxes.
fn category_flags(images: &[ImageEval], category_id: i64, iou_threshold: f64) -> (Vec<bool>, usize) {
    let mut flagged: Vec<(f64, i64, usize, bool)> = Vec::new();
    let mut total_gts = 0usize;
    for img in images {
        let det_idx: Vec<usize> = (0..img.dets.len())
            .filter(|&i| img.dets[i].category_id == category_id)
            .collect();
        let dets: Vec<Detection> = det_idx.iter().map(|&i| img.dets[i].clone()).collect();
        let gts: Vec<BBox> = img
            .gts
            .iter()
            .filter(|g| g.category_id == category_id)
            .map(|g| g.bbox)
            .collect();
        total_gts += gts.len();
        let matches = match_detections(&dets, &gts, iou_threshold);
        for (k, &orig) in det_idx.iter().enumerate() {
            flagged.push((
                dets[k].score,
                img.image_id,
                orig,
                matches.detections[k].matched_gt.is_some(),
            ));
        }
    }
    flagged.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    (flagged.into_iter().map(|f| f.3).collect(), total_gts)
}

fn curve_from_flags(flags: &[bool], total_gts: usize) -> PRCurve {
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &is_tp) in flags.iter().enumerate() {
        tp += usize::from(is_tp);
        points.push((tp as f64 / total_gts as f64, tp as f64 / (k + 1) as f64));
    }
    PRCurve { points }
}

/// Mean over `r = 0.00, 0.01, …, 1.00` of the best precision achieved at
/// recall ≥ r (0 when unreached).
fn ap_101(curve: &PRCurve) -> f64 {
    let points = &curve.points;
    let mut best = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        best[i] = running;
    }
    let mut total = 0.0;
    let mut idx = 0usize;
    for s in 0..=100u32 {
        let r = f64::from(s) / 100.0;
        while idx < points.len() && points[idx].0 < r {
            idx += 1;
        }
        if idx < points.len() {
            total += best[idx];
        }
    }
    total / 101.0
}

/// Precision-recall curve for one category pooled across images.
pub fn pr_curve(
    images: &[ImageEval],
    category_id: i64,
    iou_threshold: f64,
) -> Result<PRCurve, MetricsError> {
    check_unique_ids(images)?;
    let (flags, total_gts) = category_flags(images, category_id, iou_threshold);
    if total_gts == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(curve_from_flags(&flags, total_gts))
}

/// 101-point interpolated average precision at one IoU threshold,
/// averaged over the categories that have ground truths. Errors when the
/// evaluation set has no ground truths at all.
pub fn average_precision(images: &[ImageEval], iou_threshold: f64) -> Result<f64, MetricsError> {
    check_unique_ids(images)?;
    let cats = gt_categories(images);
    if cats.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut total = 0.0;
    for &cat in &cats {
        let (flags, total_gts) = category_flags(images, cat, iou_threshold);
        total += ap_101(&curve_from_flags(&flags, total_gts));
    }
    Ok(total / cats.len() as f64)
}

/// The ten COCO IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (50..=95).step_by(5).map(|t| f64::from(t) / 100.0).collect()
}

/// Mean of [`average_precision`] over the COCO threshold set.
pub fn mean_ap(images: &[ImageEval]) -> Result<f64, MetricsError> {
    let thresholds = coco_thresholds();
    let mut total = 0.0;
    for t in &thresholds {
        total += average_precision(images, *t)?;
    }
    Ok(total / thresholds.len() as f64)
}

/// Average recall with at most `max_dets` detections per image (taken by
/// descending score, per category), averaged over the COCO threshold set
/// and over categories with ground truths.
pub fn average_recall(images: &[ImageEval], max_dets: usize) -> Result<f64, MetricsError> {
    check_unique_ids(images)?;
    let cats = gt_categories(images);
    if cats.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let thresholds = coco_thresholds();
    let mut total = 0.0;
    for &cat in &cats {
        let mut cat_total = 0.0;
        for t in &thresholds {
            let mut matched = 0usize;
            let mut gts_count = 0usize;
            for img in images {
                let mut det_idx: Vec<usize> = (0..img.dets.len())
                    .filter(|&i| img.dets[i].category_id == cat)
                    .collect();
                det_idx.sort_by(|&a, &b| {
                    img.dets[b]
                        .score
                        .partial_cmp(&img.dets[a].score)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                det_idx.truncate(max_dets);
                let dets: Vec<Detection> =
                    det_idx.iter().map(|&i| img.dets[i].clone()).collect();
                let gts: Vec<BBox> = img
                    .gts
                    .iter()
                    .filter(|g| g.category_id == cat)
                    .map(|g| g.bbox)
                    .collect();
                gts_count += gts.len();
                matched += match_detections(&dets, &gts, *t).tp_count();
            }
            cat_total += matched as f64 / gts_count as f64;
        }
        total += cat_total / thresholds.len() as f64;
    }
    Ok(total / cats.len() as f64)
}

/// Precision and recall after discarding detections below
/// `conf_threshold` and matching at `iou_threshold`.
///
/// Conventions: precision is 1.0 when no detections survive; recall is
/// 1.0 when there are no ground truths (and 0.0 when ground truths exist
/// but nothing matches).
pub fn operating_point(
    images: &[ImageEval],
    conf_threshold: f64,
    iou_threshold: f64,
) -> Result<(f64, f64), MetricsError> {
    check_unique_ids(images)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_count = 0usize;
    for img in images {
        let mut cats: BTreeSet<i64> = img.gts.iter().map(|g| g.category_id).collect();
        cats.extend(
            img.dets
                .iter()
                .filter(|d| d.score >= conf_threshold)
                .map(|d| d.category_id),
        );
        for cat in cats {
            let dets: Vec<Detection> = img
                .dets
                .iter()
                .filter(|d| d.category_id == cat && d.score >= conf_threshold)
                .cloned()
                .collect();
            let gts: Vec<BBox> = img
                .gts
                .iter()
                .filter(|g| g.category_id == cat)
                .map(|g| g.bbox)
                .collect();
            let matches = match_detections(&dets, &gts, iou_threshold);
            let t = matches.tp_count();
            tp += t;
            fp += dets.len() - t;
            fn_count += gts.len() - t;
        }
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_count == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_count) as f64
    };
    Ok((precision, recall))
}

/// Detection-metric bundle; serializes with the fixed field names
/// `ap50, ap75, map, ar100, precision, recall`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEvalSummary {
    pub ap50: f64,
    pub ap75: f64,
    pub map: f64,
    pub ar100: f64,
    #[serde(rename = "precision")]
    pub precision_at_conf: f64,
    #[serde(rename = "recall")]
    pub recall_at_conf: f64,
}

/// Computes the full detection summary: AP@50, AP@75, mAP, AR@100, and
/// the operating point at (`conf_threshold`, `op_iou_threshold`).
pub fn det_eval_summary(
    images: &[ImageEval],
    conf_threshold: f64,
    op_iou_threshold: f64,
) -> Result<DetEvalSummary, MetricsError> {
    let (precision, recall) = operating_point(images, conf_threshold, op_iou_threshold)?;
    Ok(DetEvalSummary {
        ap50: average_precision(images, 0.50)?,
        ap75: average_precision(images, 0.75)?,
        map: mean_ap(images)?,
        ar100: average_recall(images, 100)?,
        precision_at_conf: precision,
        recall_at_conf: recall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// One-vs-rest precision/recall/F1 per class plus overall accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
}

/// Builds a per-class report over parallel label sequences. Metrics with
/// a zero denominator are 0; an empty input has accuracy 1.0 (vacuous).
pub fn classification_report(
    truth: &[String],
    predicted: &[String],
    class_set: &[String],
) -> Result<ClassReport, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let known: HashSet<&str> = class_set.iter().map(|s| s.as_str()).collect();
    for label in truth.iter().chain(predicted.iter()) {
        if !known.contains(label.as_str()) {
            return Err(MetricsError::UnknownLabel {
                label: label.clone(),
            });
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut classes = Vec::with_capacity(class_set.len());
    for class in class_set {
        let tp = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| *t == class && *p == class)
            .count() as u64;
        let fp = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| *t != class && *p == class)
            .count() as u64;
        let fn_count = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| *t == class && *p != class)
            .count() as u64;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_count);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        classes.push(ClassMetrics {
            name: class.clone(),
            precision,
            recall,
            f1,
            support: tp + fn_count,
        });
    }
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    let accuracy = if truth.is_empty() {
        1.0
    } else {
        correct as f64 / truth.len() as f64
    };
    Ok(ClassReport { classes, accuracy })
}

/// One image's ground-truth label and pipeline outcome: `fracture` is the
/// manifest label, `survived` is whether any detection survived the full
/// pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageOutcome {
    pub fracture: bool,
    pub survived: bool,
}

/// Image-level fracture/normal metrics with their underlying counts;
/// serializes with field names `accuracy`, `precision`, `recall`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLevelSummary {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when no fracture images exist, making recall vacuous (reported
    /// as 1.0 by convention).
    pub recall_zero_support: bool,
}

/// An image counts positive iff at least one detection survived the full
/// pipeline. Precision is 1.0 when nothing survived anywhere; recall is
/// 1.0 with `recall_zero_support` set when no fracture images exist.
pub fn image_level_eval(outcomes: &[ImageOutcome]) -> ImageLevelSummary {
    let mut s = ImageLevelSummary {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
        accuracy: 1.0,
        precision: 1.0,
        recall: 1.0,
        recall_zero_support: false,
    };
    for o in outcomes {
        match (o.fracture, o.survived) {
            (true, true) => s.true_pos += 1,
            (true, false) => s.false_neg += 1,
            (false, true) => s.false_pos += 1,
            (false, false) => s.true_neg += 1,
        }
    }
    let n = outcomes.len() as u64;
    if n > 0 {
        s.accuracy = (s.true_pos + s.true_neg) as f64 / n as f64;
    }
    if s.true_pos + s.false_pos > 0 {
        s.precision = s.true_pos as f64 / (s.true_pos + s.false_pos) as f64;
    }
    if s.true_pos + s.false_neg > 0 {
        s.recall = s.true_pos as f64 / (s.true_pos + s.false_neg) as f64;
    } else {
        s.recall_zero_support = true;
    }
    s
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

pub fn render_det_summary(s: &DetEvalSummary) -> String {
    format!(
        "ap50       {:.4}\nap75       {:.4}\nmap        {:.4}\nar100      {:.4}\nprecision  {:.4}\nrecall     {:.4}\n",
        s.ap50, s.ap75, s.map, s.ar100, s.precision_at_conf, s.recall_at_conf
    )
}

pub fn det_summary_delimited(s: &DetEvalSummary) -> String {
    format!(
        "ap50,ap75,map,ar100,precision,recall\n{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        s.ap50, s.ap75, s.map, s.ar100, s.precision_at_conf, s.recall_at_conf
    )
}

pub fn render_class_report(r: &ClassReport) -> String {
    let mut out = format!(
        "{:<32} {:>9} {:>9} {:>9} {:>8}\n",
        "Pathology", "Precision", "Recall", "F1-Score", "Support"
    );
    for c in &r.classes {
        out.push_str(&format!(
            "{:<32} {:>9.2} {:>9.2} {:>9.2} {:>8}\n",
            c.name, c.precision, c.recall, c.f1, c.support
        ));
    }
    out.push_str(&format!("Accuracy {:.4}\n", r.accuracy));
    out
}

pub fn class_report_delimited(r: &ClassReport) -> String {
    let mut out = String::from("class,precision,recall,f1,support\n");
    for c in &r.classes {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            c.name, c.precision, c.recall, c.f1, c.support
        ));
    }
    out
}

/// Text summary carrying the Accuracy / Precision / Recall column names.
pub fn render_image_summary(s: &ImageLevelSummary) -> String {
    let mut out = format!(
        "{:>12} {:>12} {:>12}\n{:>11.2}% {:>11.2}% {:>11.2}%\n",
        "Accuracy",
        "Precision",
        "Recall",
        100.0 * s.accuracy,
        100.0 * s.precision,
        100.0 * s.recall
    );
    out.push_str(&format!(
        "tp {}  fp {}  tn {}  fn {}\n",
        s.true_pos, s.false_pos, s.true_neg, s.false_neg
    ));
    if s.recall_zero_support {
        out.push_str("note: no fracture images; recall reported as 1.0 by convention\n");
    }
    out
}

pub fn image_summary_delimited(s: &ImageLevelSummary) -> String {
    format!(
        "accuracy,precision,recall,tp,fp,tn,fn\n{:.6},{:.6},{:.6},{},{},{},{}\n",
        s.accuracy, s.precision, s.recall, s.true_pos, s.false_pos, s.true_neg, s.false_neg
    )
}
