//! `fracdet eval-det`: detection metrics over a COCO ground-truth
//! dataset and a results document.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use fracdet_core::coco::{parse_dataset, parse_results};
use fracdet_core::metrics::{det_eval_summary, GtBox, ImageEval, MetricsError};
use fracdet_core::Detection;

use crate::failure::{ensure_dir, read_input, write_output, CmdResult, Failure};

/// Evaluate detection results: AP@50, AP@75, mAP, AR@100, and the
/// precision/recall operating point.
#[derive(Debug, Args)]
pub struct EvalDetArgs {
    /// COCO ground-truth dataset
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection results document (COCO results format)
    #[arg(long)]
    pub results: PathBuf,
    /// IoU threshold of the operating point
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Confidence threshold of the operating point
    #[arg(long, default_value_t = 0.3)]
    pub conf: f64,
    /// Directory to receive det_summary.json (stdout-only without it)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: EvalDetArgs) -> CmdResult {
    let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
    if !unit(args.iou) {
        return Err(Failure::input(anyhow!(
            "--iou must be in [0, 1], got {}",
            args.iou
        )));
    }
    if !unit(args.conf) {
        return Err(Failure::input(anyhow!(
            "--conf must be in [0, 1], got {}",
            args.conf
        )));
    }

    let gt = parse_dataset(&read_input(&args.gt)?).map_err(Failure::input)?;
    let records = parse_results(&read_input(&args.results)?).map_err(Failure::input)?;

    let mut dets: HashMap<i64, Vec<Detection>> = HashMap::new();
    for r in &records {
        if gt.image(r.image_id).is_none() {
            return Err(Failure::input(anyhow!(
                "results reference image id {} which is not in the ground truth",
                r.image_id
            )));
        }
        dets.entry(r.image_id)
            .or_default()
            .push(Detection::new(r.bbox, r.score, r.category_id));
    }

    let images: Vec<ImageEval> = gt
        .images
        .iter()
        .map(|img| ImageEval {
            image_id: img.id,
            dets: dets.remove(&img.id).unwrap_or_default(),
            gts: gt
                .annotations
                .iter()
                .filter(|a| a.image_id == img.id)
                .map(|a| GtBox {
                    bbox: a.bbox,
                    category_id: a.category_id,
                })
                .collect(),
        })
        .collect();

    let summary = det_eval_summary(&images, args.conf, args.iou).map_err(|e| match e {
        MetricsError::NoGroundTruth => Failure::undefined_metric(e),
        other => Failure::input(other),
    })?;

    let mut doc = serde_json::to_string_pretty(&summary).expect("summary serialization");
    doc.push('\n');
    print!("{doc}");
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_output(&out.join("det_summary.json"), doc)?;
    }
    Ok(())
}
