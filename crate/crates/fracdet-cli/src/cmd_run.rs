//! `fracdet run`: the detector-to-classifier pipeline over a corpus
//! manifest, with file-based or external-command backends.
//!
//! Outputs land in the `--out` directory: `run_summary.json` (detection
//! summary, image-level summary, class report, failures),
//! `per_image.json` (stage-by-stage accounting per image), `report.txt`
//! (the rendered tables, also printed to stdout), optional annotated
//! `overlays/`, and an `interchange/` scratch area when command backends
//! are used. Per-image failures leave the other images evaluated and the
//! outputs written; the exit code is then 4.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::anyhow;
use clap::Args;
use fracdet_core::coco::{parse_dataset, parse_results, Dataset};
use fracdet_core::imgproc::{render_overlay, OverlayItem};
use fracdet_core::metrics::{render_class_report, render_det_summary, render_image_summary};
use fracdet_core::pipeline::{
    corpus_from_manifest, evaluate_corpus, parse_corpus_manifest, parse_crop_labels,
    ClassifierBackend, CorpusEvaluation, CorpusImage, DetectorBackend, FileClassifierBackend,
    FileDetectorBackend, ImageSource, PipelineError, ProcessClassifierBackend,
    ProcessDetectorBackend,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{ensure_dir, read_input, write_output, CmdResult, Failure};
use crate::images::{save_gray, FsSource};

/// Run the detection-classification pipeline over a corpus and evaluate
/// it against the manifest labels (and ground-truth boxes when given).
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Corpus manifest: `path,label[,gt_id]` rows
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run-configuration document; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; all writes stay inside it
    #[arg(long)]
    pub out: PathBuf,
    /// COCO dataset backing the manifest's gt_id references
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Root for relative manifest image paths (default: manifest's directory)
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    /// Precomputed detections (COCO results format)
    #[arg(long, conflicts_with = "detector_cmd")]
    pub detections: Option<PathBuf>,
    /// Detector command template with {input} and {output} placeholders
    #[arg(long)]
    pub detector_cmd: Option<String>,
    /// Precomputed crop classifications
    #[arg(long, conflicts_with = "classifier_cmd")]
    pub crop_labels: Option<PathBuf>,
    /// Classifier command template with {input} and {output} placeholders
    #[arg(long)]
    pub classifier_cmd: Option<String>,
    /// Confidence gate (detections below are dropped)
    #[arg(long)]
    pub conf: Option<f64>,
    /// Non-maximum-suppression IoU threshold
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Crop margin as a fraction of box size on each side
    #[arg(long)]
    pub crop_margin: Option<f64>,
    /// Classifier label whose crops are discarded
    #[arg(long)]
    pub normal_label: Option<String>,
    /// Keep at most this many detections per image after the gate
    #[arg(long)]
    pub max_detections: Option<usize>,
    /// Write annotated overlay images
    #[arg(long)]
    pub overlay: bool,
    /// Timeout for each backend command invocation
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
}

enum BackendChoice {
    File(PathBuf),
    Command(String),
}

/// Picks the file-or-command backend: flags take the choice over the
/// config entirely as soon as either flag is present.
fn pick_backend(
    what: &str,
    file_flag: Option<PathBuf>,
    cmd_flag: Option<String>,
    file_cfg: Option<PathBuf>,
    cmd_cfg: Option<String>,
) -> CmdResult<BackendChoice> {
    let (file, cmd) = if file_flag.is_some() || cmd_flag.is_some() {
        (file_flag, cmd_flag)
    } else {
        (file_cfg, cmd_cfg)
    };
    match (file, cmd) {
        (Some(_), Some(_)) => Err(Failure::input(anyhow!(
            "choose either a {what} file or a {what} command, not both"
        ))),
        (None, None) => Err(Failure::input(anyhow!(
            "no {what} backend: give a {what} file or a {what} command"
        ))),
        (Some(f), None) => Ok(BackendChoice::File(f)),
        (None, Some(c)) => Ok(BackendChoice::Command(c)),
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    det_summary: &'a Option<fracdet_core::DetEvalSummary>,
    image_summary: &'a fracdet_core::ImageLevelSummary,
    class_report: &'a fracdet_core::ClassReport,
    failures: &'a [fracdet_core::pipeline::ImageFailure],
}

fn render_report(eval: &CorpusEvaluation) -> String {
    let mut out = String::from("detection metrics\n");
    match &eval.det_summary {
        Some(s) => out.push_str(&render_det_summary(s)),
        None => out.push_str("  (no ground-truth boxes; skipped)\n"),
    }
    out.push_str("\nimage-level evaluation\n");
    out.push_str(&render_image_summary(&eval.image_summary));
    out.push_str("\nclassification report\n");
    out.push_str(&render_class_report(&eval.class_report));
    if !eval.failures.is_empty() {
        out.push_str(&format!("\nfailures ({})\n", eval.failures.len()));
        for f in &eval.failures {
            out.push_str(&format!(
                "  image {} ({}) at {}: {}\n",
                f.image_id, f.path, f.stage, f.message
            ));
        }
    }
    out
}

/// File name for an overlay: the image id (negative rendered as `mN`)
/// plus the source stem and extension.
fn overlay_name(image_id: i64, path: &str) -> String {
    let p = Path::new(path);
    let stem = p
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let ext = match p.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => "png",
        _ => "pgm",
    };
    let id = if image_id < 0 {
        format!("m{}", -image_id)
    } else {
        image_id.to_string()
    };
    format!("{id}_{stem}.{ext}")
}

fn write_overlays(
    out: &Path,
    eval: &CorpusEvaluation,
    corpus: &[CorpusImage],
    source: &dyn ImageSource,
) -> CmdResult {
    let dir = out.join("overlays");
    ensure_dir(&dir)?;
    for result in &eval.per_image {
        let entry = corpus
            .iter()
            .find(|c| c.image.id == result.image_id)
            .expect("evaluated image is in the corpus");
        let pixels = source
            .load(&entry.image)
            .map_err(|e| Failure::from(anyhow!("overlay: {e}")))?;
        let items: Vec<OverlayItem> = result
            .surviving
            .iter()
            .map(|s| OverlayItem {
                bbox: s.bbox,
                label: s.label.clone(),
                score: Some(s.score),
            })
            .collect();
        let annotated = render_overlay(&pixels, &items);
        let target = dir.join(overlay_name(result.image_id, &entry.image.path));
        save_gray(&target, &annotated)?;
    }
    Ok(())
}

pub fn run(args: RunArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.conf {
        cfg.pipeline.conf_threshold = v;
    }
    if let Some(v) = args.nms_iou {
        cfg.pipeline.nms_iou = v;
    }
    if let Some(v) = args.crop_margin {
        cfg.pipeline.crop_margin = v;
    }
    if let Some(v) = &args.normal_label {
        cfg.pipeline.normal_label = v.clone();
    }
    if let Some(v) = args.max_detections {
        cfg.pipeline.max_detections = v;
    }
    cfg.pipeline.validate().map_err(Failure::input)?;

    let manifest_path = args
        .manifest
        .or(cfg.paths.manifest)
        .ok_or_else(|| Failure::input(anyhow!("no corpus manifest: use --manifest or a config")))?;
    let rows = parse_corpus_manifest(&read_input(&manifest_path)?).map_err(Failure::input)?;
    let gt: Option<Dataset> = match args.gt.or(cfg.paths.gt) {
        Some(path) => Some(parse_dataset(&read_input(&path)?).map_err(Failure::input)?),
        None => None,
    };
    let corpus = corpus_from_manifest(&rows, gt.as_ref()).map_err(Failure::input)?;

    let images_dir = args
        .images_dir
        .or(cfg.paths.images_dir)
        .or_else(|| manifest_path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let source = FsSource::new(images_dir);

    let detector_choice = pick_backend(
        "detector",
        args.detections,
        args.detector_cmd,
        cfg.paths.detections.clone(),
        cfg.paths.detector_cmd.clone(),
    )?;
    let classifier_choice = pick_backend(
        "classifier",
        args.crop_labels,
        args.classifier_cmd,
        cfg.paths.crop_labels.clone(),
        cfg.paths.classifier_cmd.clone(),
    )?;

    ensure_dir(&args.out)?;
    // Backend commands run with the interchange directory as their
    // working directory, so the paths substituted into the command must
    // be absolute to mean the same thing there.
    let interchange = std::path::absolute(args.out.join("interchange"))
        .map_err(|e| Failure::from(anyhow!("cannot resolve output directory: {e}")))?;
    let timeout = Duration::from_secs(args.timeout_secs);

    let mut detector: Box<dyn DetectorBackend> = match detector_choice {
        BackendChoice::File(path) => Box::new(FileDetectorBackend::new(
            parse_results(&read_input(&path)?).map_err(Failure::input)?,
        )),
        BackendChoice::Command(cmd) => {
            ensure_dir(&interchange)?;
            Box::new(
                ProcessDetectorBackend::new(&cmd, &interchange)
                    .map_err(Failure::input)?
                    .with_timeout(timeout),
            )
        }
    };
    let mut classifier: Box<dyn ClassifierBackend> = match classifier_choice {
        BackendChoice::File(path) => Box::new(FileClassifierBackend::new(
            parse_crop_labels(&read_input(&path)?).map_err(Failure::input)?,
        )),
        BackendChoice::Command(cmd) => {
            ensure_dir(&interchange)?;
            Box::new(
                ProcessClassifierBackend::new(&cmd, &interchange)
                    .map_err(Failure::input)?
                    .with_timeout(timeout),
            )
        }
    };

    let eval = evaluate_corpus(
        &corpus,
        &source,
        detector.as_mut(),
        classifier.as_mut(),
        &cfg.pipeline,
    )
    .map_err(|e| match e {
        PipelineError::DuplicateImage(_)
        | PipelineError::Manifest { .. }
        | PipelineError::MissingGtImage { .. } => Failure::input(e),
        other => Failure::from(anyhow::Error::from(other)),
    })?;

    let summary = RunSummary {
        det_summary: &eval.det_summary,
        image_summary: &eval.image_summary,
        class_report: &eval.class_report,
        failures: &eval.failures,
    };
    let mut summary_doc = serde_json::to_string_pretty(&summary).expect("summary serialization");
    summary_doc.push('\n');
    write_output(&args.out.join("run_summary.json"), summary_doc)?;
    let mut per_image_doc =
        serde_json::to_string_pretty(&eval.per_image).expect("per-image serialization");
    per_image_doc.push('\n');
    write_output(&args.out.join("per_image.json"), per_image_doc)?;
    let report = render_report(&eval);
    write_output(&args.out.join("report.txt"), &report)?;
    print!("{report}");

    if args.overlay {
        write_overlays(&args.out, &eval, &corpus, &source)?;
    }

    if eval.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::partial(anyhow!(
            "{} of {} images failed; outputs written to {}",
            eval.failures.len(),
            corpus.len(),
            args.out.display()
        )))
    }
}
