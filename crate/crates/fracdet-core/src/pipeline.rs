//! The detector-classifier fusion pipeline.
//!
//! Per image the stages run in a fixed order: confidence gate, truncation
//! to the detection cap, non-maximum suppression, margin-expanded crop
//! extraction, crop classification, and discarding crops the classifier
//! calls normal. Every stage is pure, so running a corpus through one
//! batched detector call and one batched classifier call produces exactly
//! the per-image results of [`run_pipeline`] on each image alone.
//!
//! Backends are pluggable: precomputed files ([`FileDetectorBackend`],
//! [`FileClassifierBackend`]) or external commands speaking a small JSON
//! interchange ([`ProcessDetectorBackend`], [`ProcessClassifierBackend`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{Dataset, ResultRecord};
use crate::geometry::{expand_with_margin, nms, BBox, Detection};
use crate::imgproc::{crop, read_pgm, write_pgm, GrayImage, ImgError};
use crate::metrics::{
    classification_report, det_eval_summary, image_level_eval, ClassReport, DetEvalSummary,
    GtBox, ImageEval, ImageLevelSummary, ImageOutcome, MetricsError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("ground-truth reference {id} is not an image id in the dataset")]
    MissingGtImage { id: i64 },
    #[error("image id {0} appears more than once in the corpus")]
    DuplicateImage(i64),
    #[error("failed to read image {path}: {message}")]
    ImageLoad { path: String, message: String },
    #[error("image {image_id}: invalid detection from backend: {message}")]
    InvalidDetection { image_id: i64, message: String },
    #[error("image {image_id}: invalid classification: {message}")]
    InvalidClassification { image_id: i64, message: String },
    #[error("no classification for crop of image {image_id} at {x:.2},{y:.2},{w:.2},{h:.2}")]
    MissingClassification { image_id: i64, x: f64, y: f64, w: f64, h: f64 },
    #[error("{stage} backend: {message}")]
    Backend { stage: &'static str, message: String },
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("interchange i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("interchange json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Tunable pipeline parameters. Unspecified fields deserialize to the
/// defaults: confidence 0.30, suppression IoU 0.10, crop margin 0.25,
/// normal label "Normal", detection cap 15.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_conf")]
    pub conf_threshold: f64,
    #[serde(default = "default_nms_iou")]
    pub nms_iou: f64,
    #[serde(default = "default_margin")]
    pub crop_margin: f64,
    #[serde(default = "default_normal_label")]
    pub normal_label: String,
    #[serde(default = "default_max_detections")]
    pub max_detections: usize,
}

fn default_conf() -> f64 {
    0.30
}
fn default_nms_iou() -> f64 {
    0.10
}
fn default_margin() -> f64 {
    0.25
}
fn default_normal_label() -> String {
    "Normal".to_string()
}
fn default_max_detections() -> usize {
    15
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            conf_threshold: default_conf(),
            nms_iou: default_nms_iou(),
            crop_margin: default_margin(),
            normal_label: default_normal_label(),
            max_detections: default_max_detections(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !unit(self.conf_threshold) {
            return Err(PipelineError::Config(format!(
                "conf_threshold must be in [0, 1], got {}",
                self.conf_threshold
            )));
        }
        if !unit(self.nms_iou) {
            return Err(PipelineError::Config(format!(
                "nms_iou must be in [0, 1], got {}",
                self.nms_iou
            )));
        }
        if !(self.crop_margin.is_finite() && self.crop_margin >= 0.0) {
            return Err(PipelineError::Config(format!(
                "crop_margin must be non-negative, got {}",
                self.crop_margin
            )));
        }
        if self.normal_label.is_empty() {
            return Err(PipelineError::Config(
                "normal_label must be non-empty".to_string(),
            ));
        }
        if self.max_detections == 0 {
            return Err(PipelineError::Config(
                "max_detections must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// An image to run: `path` is what backends and sources see, `id` keys
/// detections, crops, and evaluation records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: i64,
    pub path: String,
}

/// A margin-expanded crop handed to a classifier. `crop_box` is the exact
/// (fractional) expanded box; `pixels` covers that box rounded to whole
/// pixels and clamped inside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct CropQuery {
    pub image_id: i64,
    pub crop_box: BBox,
    pub pixels: GrayImage,
}

/// A classifier verdict: the winning label and the full distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub probabilities: BTreeMap<String, f64>,
}

impl Classification {
    /// Checks that the distribution is a probability vector (entries in
    /// [0, 1] summing to 1 within 1e-6) and that `label` attains the
    /// maximum probability.
    pub fn validate(&self) -> Result<(), String> {
        if self.probabilities.is_empty() {
            return Err("empty probability vector".to_string());
        }
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for (name, &p) in &self.probabilities {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(format!("probability {p} for {name:?} is out of range"));
            }
            sum += p;
            max = max.max(p);
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(format!("probabilities sum to {sum}, expected 1"));
        }
        match self.probabilities.get(&self.label) {
            None => Err(format!("label {:?} missing from the distribution", self.label)),
            Some(&p) if p >= max - 1e-9 => Ok(()),
            Some(&p) => Err(format!(
                "label {:?} has probability {p} but the maximum is {max}",
                self.label
            )),
        }
    }
}

/// Loads image pixels for crop extraction.
pub trait ImageSource {
    fn load(&self, image: &ImageRef) -> Result<GrayImage, PipelineError>;
}

/// Produces detections for a batch of images, one invocation per batch.
/// The returned outer vector must parallel the input slice.
pub trait DetectorBackend {
    fn detect_batch(&mut self, images: &[ImageRef]) -> Result<Vec<Vec<Detection>>, PipelineError>;
}

/// Classifies a batch of crops, one invocation per batch. The returned
/// vector must parallel the input slice.
pub trait ClassifierBackend {
    fn classify_batch(&mut self, crops: &[CropQuery]) -> Result<Vec<Classification>, PipelineError>;
}

/// Reads `.pgm` images from a directory; absolute manifest paths are used
/// as-is.
pub struct PgmDirSource {
    root: PathBuf,
}

impl PgmDirSource {
    pub fn new<P: Into<PathBuf>>(root: P) -> Self {
        PgmDirSource { root: root.into() }
    }
}

impl ImageSource for PgmDirSource {
    fn load(&self, image: &ImageRef) -> Result<GrayImage, PipelineError> {
        let rel = Path::new(&image.path);
        let full = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        };
        let bytes = std::fs::read(&full).map_err(|e| PipelineError::ImageLoad {
            path: full.display().to_string(),
            message: e.to_string(),
        })?;
        read_pgm(&bytes).map_err(|e| PipelineError::ImageLoad {
            path: full.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// In-memory source keyed by image id, for tests and fixtures.
#[derive(Default)]
pub struct MemorySource {
    images: HashMap<i64, GrayImage>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: i64, image: GrayImage) {
        self.images.insert(id, image);
    }
}

impl ImageSource for MemorySource {
    fn load(&self, image: &ImageRef) -> Result<GrayImage, PipelineError> {
        self.images
            .get(&image.id)
            .cloned()
            .ok_or_else(|| PipelineError::ImageLoad {
                path: image.path.clone(),
                message: format!("no pixels registered for image id {}", image.id),
            })
    }
}

/// Serves precomputed detections (standard results records) keyed by
/// image id; images without records get an empty list.
pub struct FileDetectorBackend {
    by_image: HashMap<i64, Vec<Detection>>,
}

impl FileDetectorBackend {
    pub fn new(records: Vec<ResultRecord>) -> Self {
        let mut by_image: HashMap<i64, Vec<Detection>> = HashMap::new();
        for r in records {
            by_image
                .entry(r.image_id)
                .or_default()
                .push(Detection::new(r.bbox, r.score, r.category_id));
        }
        FileDetectorBackend { by_image }
    }
}

impl DetectorBackend for FileDetectorBackend {
    fn detect_batch(&mut self, images: &[ImageRef]) -> Result<Vec<Vec<Detection>>, PipelineError> {
        Ok(images
            .iter()
            .map(|img| self.by_image.get(&img.id).cloned().unwrap_or_default())
            .collect())
    }
}

/// One precomputed crop verdict; crops are identified by image id plus
/// the crop box rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropLabelRecord {
    pub image_id: i64,
    pub bbox: BBox,
    pub label: String,
    pub probabilities: BTreeMap<String, f64>,
}

pub fn parse_crop_labels(document: &str) -> Result<Vec<CropLabelRecord>, PipelineError> {
    Ok(serde_json::from_str(document)?)
}

pub fn serialize_crop_labels(records: &[CropLabelRecord]) -> String {
    let mut out = serde_json::to_string_pretty(records).expect("crop label serialization");
    out.push('\n');
    out
}

fn crop_key(image_id: i64, b: &BBox) -> (i64, [i64; 4]) {
    let cents = |v: f64| (v * 100.0).round() as i64;
    (image_id, [cents(b.x), cents(b.y), cents(b.w), cents(b.h)])
}

/// Serves precomputed crop classifications; a crop without a matching
/// record is an error.
pub struct FileClassifierBackend {
    by_crop: HashMap<(i64, [i64; 4]), Classification>,
}

impl FileClassifierBackend {
    pub fn new(records: Vec<CropLabelRecord>) -> Self {
        let mut by_crop = HashMap::new();
        for r in records {
            by_crop.insert(
                crop_key(r.image_id, &r.bbox),
                Classification {
                    label: r.label,
                    probabilities: r.probabilities,
                },
            );
        }
        FileClassifierBackend { by_crop }
    }
}

impl ClassifierBackend for FileClassifierBackend {
    fn classify_batch(&mut self, crops: &[CropQuery]) -> Result<Vec<Classification>, PipelineError> {
        crops
            .iter()
            .map(|c| {
                self.by_crop
                    .get(&crop_key(c.image_id, &c.crop_box))
                    .cloned()
                    .ok_or({
                        let b = c.crop_box.rounded_2dp();
                        PipelineError::MissingClassification {
                            image_id: c.image_id,
                            x: b.x,
                            y: b.y,
                            w: b.w,
                            h: b.h,
                        }
                    })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// External process backends
// ---------------------------------------------------------------------------

const DEFAULT_BACKEND_TIMEOUT: Duration = Duration::from_secs(120);

/// Substitutes `{input}` and `{output}` and runs the command under
/// `sh -c` with the interchange directory as working directory.
fn run_command(
    stage: &'static str,
    command: &str,
    input: &Path,
    output: &Path,
    workdir: &Path,
    timeout: Duration,
) -> Result<(), PipelineError> {
    let rendered = command
        .replace("{input}", &input.display().to_string())
        .replace("{output}", &output.display().to_string());
    let mut child = std::process::Command::new("sh")
        .arg("-c")
        .arg(&rendered)
        .current_dir(workdir)
        .stdin(std::process::Stdio::null())
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .map_err(|e| PipelineError::Backend {
            stage,
            message: format!("failed to spawn {rendered:?}: {e}"),
        })?;
    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if started.elapsed() > timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(PipelineError::Backend {
                        stage,
                        message: format!(
                            "command timed out after {}s: {rendered:?}",
                            timeout.as_secs_f64()
                        ),
                    });
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                return Err(PipelineError::Backend {
                    stage,
                    message: format!("wait failed: {e}"),
                })
            }
        }
    };
    if !status.success() {
        let mut stderr_tail = String::new();
        if let Some(mut pipe) = child.stderr.take() {
            use std::io::Read;
            let _ = pipe.read_to_string(&mut stderr_tail);
        }
        let tail: String = stderr_tail
            .chars()
            .rev()
            .take(2000)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        return Err(PipelineError::Backend {
            stage,
            message: format!("command exited with {status}: {rendered:?}\n{tail}"),
        });
    }
    Ok(())
}

fn check_placeholders(stage: &'static str, command: &str) -> Result<(), PipelineError> {
    if !command.contains("{input}") || !command.contains("{output}") {
        return Err(PipelineError::Backend {
            stage,
            message: "command must contain both {input} and {output} placeholders".to_string(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectorRequest<'a> {
    version: u32,
    images: &'a [ImageRef],
}

/// Runs an external detector command per batch.
///
/// The request file is JSON `{"version": 1, "images": [{"id", "path"}]}`;
/// the command must write a JSON array of results records
/// (`image_id`, `category_id`, `bbox`, `score`) to the output path.
/// Images without records get no detections.
#[derive(Debug)]
pub struct ProcessDetectorBackend {
    command: String,
    workdir: PathBuf,
    timeout: Duration,
    calls: u64,
}

impl ProcessDetectorBackend {
    pub fn new<P: Into<PathBuf>>(command: &str, workdir: P) -> Result<Self, PipelineError> {
        check_placeholders("detector", command)?;
        Ok(ProcessDetectorBackend {
            command: command.to_string(),
            workdir: workdir.into(),
            timeout: DEFAULT_BACKEND_TIMEOUT,
            calls: 0,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl DetectorBackend for ProcessDetectorBackend {
    fn detect_batch(&mut self, images: &[ImageRef]) -> Result<Vec<Vec<Detection>>, PipelineError> {
        self.calls += 1;
        let input = self.workdir.join(format!("det_request_{:04}.json", self.calls));
        let output = self.workdir.join(format!("det_response_{:04}.json", self.calls));
        let request = DetectorRequest { version: 1, images };
        std::fs::write(&input, serde_json::to_string_pretty(&request)?)?;
        run_command(
            "detector",
            &self.command,
            &input,
            &output,
            &self.workdir,
            self.timeout,
        )?;
        let body = std::fs::read_to_string(&output)?;
        let records: Vec<ResultRecord> =
            serde_json::from_str(&body).map_err(|e| PipelineError::Backend {
                stage: "detector",
                message: format!("bad response {}: {e}", output.display()),
            })?;
        let known: HashSet<i64> = images.iter().map(|i| i.id).collect();
        let mut by_image: HashMap<i64, Vec<Detection>> = HashMap::new();
        for r in records {
            if !known.contains(&r.image_id) {
                return Err(PipelineError::Backend {
                    stage: "detector",
                    message: format!("response references unknown image id {}", r.image_id),
                });
            }
            by_image
                .entry(r.image_id)
                .or_default()
                .push(Detection::new(r.bbox, r.score, r.category_id));
        }
        Ok(images
            .iter()
            .map(|i| by_image.remove(&i.id).unwrap_or_default())
            .collect())
    }
}

#[derive(Serialize)]
struct ClassifierRequestCrop {
    image_id: i64,
    bbox: BBox,
    pixels: String,
}

#[derive(Serialize)]
struct ClassifierRequest {
    version: u32,
    crops: Vec<ClassifierRequestCrop>,
}

/// Runs an external classifier command per batch.
///
/// Crops are written as `.pgm` files next to the request; the request is
/// JSON `{"version": 1, "crops": [{"image_id", "bbox", "pixels"}]}` where
/// `pixels` is the crop file name. The command must write a JSON array of
/// `{"label", "probabilities"}` objects, one per crop, in request order.
#[derive(Debug)]
pub struct ProcessClassifierBackend {
    command: String,
    workdir: PathBuf,
    timeout: Duration,
    calls: u64,
}

impl ProcessClassifierBackend {
    pub fn new<P: Into<PathBuf>>(command: &str, workdir: P) -> Result<Self, PipelineError> {
        check_placeholders("classifier", command)?;
        Ok(ProcessClassifierBackend {
            command: command.to_string(),
            workdir: workdir.into(),
            timeout: DEFAULT_BACKEND_TIMEOUT,
            calls: 0,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl ClassifierBackend for ProcessClassifierBackend {
    fn classify_batch(&mut self, crops: &[CropQuery]) -> Result<Vec<Classification>, PipelineError> {
        self.calls += 1;
        let input = self.workdir.join(format!("cls_request_{:04}.json", self.calls));
        let output = self.workdir.join(format!("cls_response_{:04}.json", self.calls));
        let mut request = ClassifierRequest {
            version: 1,
            crops: Vec::with_capacity(crops.len()),
        };
        for (k, c) in crops.iter().enumerate() {
            let name = format!("crop_{:04}_{k:05}.pgm", self.calls);
            std::fs::write(self.workdir.join(&name), write_pgm(&c.pixels))?;
            request.crops.push(ClassifierRequestCrop {
                image_id: c.image_id,
                bbox: c.crop_box,
                pixels: name,
            });
        }
        std::fs::write(&input, serde_json::to_string_pretty(&request)?)?;
        run_command(
            "classifier",
            &self.command,
            &input,
            &output,
            &self.workdir,
            self.timeout,
        )?;
        let body = std::fs::read_to_string(&output)?;
        let verdicts: Vec<Classification> =
            serde_json::from_str(&body).map_err(|e| PipelineError::Backend {
                stage: "classifier",
                message: format!("bad response {}: {e}", output.display()),
            })?;
        if verdicts.len() != crops.len() {
            return Err(PipelineError::Backend {
                stage: "classifier",
                message: format!(
                    "response has {} verdicts for {} crops",
                    verdicts.len(),
                    crops.len()
                ),
            });
        }
        Ok(verdicts)
    }
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

/// A detection that survived the full pipeline: original box and score,
/// the classifier's label with its probability, and the crop that was
/// classified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDetection {
    pub bbox: BBox,
    pub score: f64,
    pub label: String,
    pub probability: f64,
    pub crop_box: BBox,
}

/// Per-image outcome with stage-by-stage accounting. The counters plus
/// the survivors always add back up to the raw detection count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub image_id: i64,
    pub surviving: Vec<LabeledDetection>,
    pub below_threshold: usize,
    pub truncated: usize,
    pub nms_suppressed: usize,
    pub discarded_normal: usize,
}

impl PipelineResult {
    /// Reconstructs how many raw detections entered the pipeline.
    pub fn raw_count(&self) -> usize {
        self.surviving.len()
            + self.below_threshold
            + self.truncated
            + self.nms_suppressed
            + self.discarded_normal
    }
}

#[derive(Debug)]
struct StagedDetections {
    kept: Vec<Detection>,
    below_threshold: usize,
    truncated: usize,
    nms_suppressed: usize,
}

/// Confidence gate, cap, and suppression. Validates every raw detection
/// first (finite positive-area box, score in [0, 1]).
fn stage_detections(
    image_id: i64,
    raw: &[Detection],
    cfg: &PipelineConfig,
) -> Result<StagedDetections, PipelineError> {
    for d in raw {
        d.validate().map_err(|e| PipelineError::InvalidDetection {
            image_id,
            message: e.to_string(),
        })?;
        if d.bbox.w <= 0.0 || d.bbox.h <= 0.0 {
            return Err(PipelineError::InvalidDetection {
                image_id,
                message: format!(
                    "zero-area box {:.2},{:.2},{:.2},{:.2}",
                    d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h
                ),
            });
        }
    }
    let mut gated: Vec<Detection> = raw
        .iter()
        .filter(|d| d.score >= cfg.conf_threshold)
        .cloned()
        .collect();
    let below_threshold = raw.len() - gated.len();
    let mut order: Vec<usize> = (0..gated.len()).collect();
    order.sort_by(|&a, &b| {
        gated[b]
            .score
            .partial_cmp(&gated[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(cfg.max_detections);
    let truncated = gated.len() - order.len();
    gated = order.into_iter().map(|i| gated[i].clone()).collect();
    let kept = nms(&gated, cfg.nms_iou);
    let nms_suppressed = gated.len() - kept.len();
    Ok(StagedDetections {
        kept,
        below_threshold,
        truncated,
        nms_suppressed,
    })
}

/// Expands each kept detection by the crop margin, clamps to the image,
/// and extracts pixel crops. A detection entirely outside the image is a
/// backend error.
fn make_crops(
    image_id: i64,
    pixels: &GrayImage,
    kept: &[Detection],
    margin: f64,
) -> Result<Vec<CropQuery>, PipelineError> {
    let bounds = pixels.bounds();
    let mut crops = Vec::with_capacity(kept.len());
    for d in kept {
        let crop_box = expand_with_margin(&d.bbox, margin, bounds);
        if crop_box.w <= 0.0 || crop_box.h <= 0.0 {
            return Err(PipelineError::InvalidDetection {
                image_id,
                message: format!(
                    "box {:.2},{:.2},{:.2},{:.2} lies outside the {}x{} image",
                    d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, bounds.width, bounds.height
                ),
            });
        }
        let rect = integer_rect(&crop_box, bounds.width, bounds.height);
        crops.push(CropQuery {
            image_id,
            crop_box,
            pixels: crop(pixels, &rect)?,
        });
    }
    Ok(crops)
}

/// Rounds a clamped fractional box to whole pixels, keeping at least one
/// pixel of extent and staying inside the image.
fn integer_rect(b: &BBox, width: u32, height: u32) -> BBox {
    let wmax = i64::from(width);
    let hmax = i64::from(height);
    let x = (b.x.round() as i64).clamp(0, wmax - 1);
    let y = (b.y.round() as i64).clamp(0, hmax - 1);
    let w = (b.w.round() as i64).max(1).min(wmax - x);
    let h = (b.h.round() as i64).max(1).min(hmax - y);
    BBox::new(x as f64, y as f64, w as f64, h as f64)
}

/// Applies classifier verdicts: drops crops labelled with the normal
/// label, keeps the rest with the winning label and its probability.
fn finish_result(
    image_id: i64,
    staged: StagedDetections,
    crops: &[CropQuery],
    verdicts: &[Classification],
    normal_label: &str,
) -> Result<PipelineResult, PipelineError> {
    debug_assert_eq!(staged.kept.len(), crops.len());
    if verdicts.len() != crops.len() {
        return Err(PipelineError::InvalidClassification {
            image_id,
            message: format!("{} verdicts for {} crops", verdicts.len(), crops.len()),
        });
    }
    let mut surviving = Vec::new();
    let mut discarded_normal = 0usize;
    for ((d, c), v) in staged.kept.iter().zip(crops).zip(verdicts) {
        v.validate()
            .map_err(|message| PipelineError::InvalidClassification { image_id, message })?;
        if v.label == normal_label {
            discarded_normal += 1;
            continue;
        }
        surviving.push(LabeledDetection {
            bbox: d.bbox,
            score: d.score,
            label: v.label.clone(),
            probability: v.probabilities[&v.label],
            crop_box: c.crop_box,
        });
    }
    Ok(PipelineResult {
        image_id,
        surviving,
        below_threshold: staged.below_threshold,
        truncated: staged.truncated,
        nms_suppressed: staged.nms_suppressed,
        discarded_normal,
    })
}

/// Runs the full pipeline for one image: a detector batch of one, the
/// pure stages, and a classifier batch over this image's crops.
pub fn run_pipeline(
    image: &ImageRef,
    source: &dyn ImageSource,
    detector: &mut dyn DetectorBackend,
    classifier: &mut dyn ClassifierBackend,
    cfg: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    cfg.validate()?;
    let batch = detector.detect_batch(std::slice::from_ref(image))?;
    let raw = batch.into_iter().next().ok_or(PipelineError::Backend {
        stage: "detector",
        message: "empty batch response".to_string(),
    })?;
    let staged = stage_detections(image.id, &raw, cfg)?;
    let pixels = source.load(image)?;
    let crops = make_crops(image.id, &pixels, &staged.kept, cfg.crop_margin)?;
    let verdicts = classifier.classify_batch(&crops)?;
    finish_result(image.id, staged, &crops, &verdicts, &cfg.normal_label)
}

// ---------------------------------------------------------------------------
// Corpus evaluation
// ---------------------------------------------------------------------------

/// One corpus manifest row: image path, whether the image truly contains
/// a fracture, and an optional ground-truth image id.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub fracture: bool,
    pub gt_id: Option<i64>,
}

/// Parses a corpus manifest: comma-separated `path,label[,gt_id]` rows
/// with label `fracture` or `normal`. Blank lines and `#` comments are
/// skipped, as is an optional `path,label[,gt_id]` header.
pub fn parse_corpus_manifest(text: &str) -> Result<Vec<ManifestRow>, PipelineError> {
    let mut rows = Vec::new();
    let mut saw_row = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !saw_row && fields.len() >= 2 && fields[0].eq_ignore_ascii_case("path") {
            continue;
        }
        saw_row = true;
        if !(2..=3).contains(&fields.len()) {
            return Err(PipelineError::Manifest {
                line: i + 1,
                message: format!("expected 2 or 3 fields, got {}", fields.len()),
            });
        }
        let fracture = match fields[1].to_ascii_lowercase().as_str() {
            "fracture" => true,
            "normal" => false,
            other => {
                return Err(PipelineError::Manifest {
                    line: i + 1,
                    message: format!("label must be fracture or normal, got {other:?}"),
                })
            }
        };
        let gt_id = match fields.get(2) {
            None => None,
            Some(&"") => None,
            Some(s) => Some(s.parse::<i64>().map_err(|_| PipelineError::Manifest {
                line: i + 1,
                message: format!("bad ground-truth id {s:?}"),
            })?),
        };
        rows.push(ManifestRow {
            path: fields[0].to_string(),
            fracture,
            gt_id,
        });
    }
    Ok(rows)
}

/// A corpus entry ready to evaluate. `det_gts` is `Some` when the image
/// participates in detection metrics: its known ground-truth boxes
/// (empty for normal images). Fracture images without a ground-truth
/// reference carry `None` and are skipped by detection metrics only.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusImage {
    pub image: ImageRef,
    pub fracture: bool,
    pub det_gts: Option<Vec<BBox>>,
}

/// Resolves manifest rows against an optional ground-truth dataset.
///
/// Rows with a ground-truth id take that id and the dataset's boxes for
/// it; other rows get sequential negative ids (-1, -2, … by row order).
/// Normal rows without a reference participate in detection metrics as
/// known-empty images.
pub fn corpus_from_manifest(
    rows: &[ManifestRow],
    gt: Option<&Dataset>,
) -> Result<Vec<CorpusImage>, PipelineError> {
    let mut corpus = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let (id, det_gts) = match row.gt_id {
            Some(id) => {
                let dataset = gt.ok_or(PipelineError::Manifest {
                    line: i + 1,
                    message: format!(
                        "row for {:?} references ground-truth id {id} but no dataset was given",
                        row.path
                    ),
                })?;
                if !dataset.images.iter().any(|img| img.id == id) {
                    return Err(PipelineError::MissingGtImage { id });
                }
                let boxes: Vec<BBox> = dataset
                    .annotations
                    .iter()
                    .filter(|a| a.image_id == id)
                    .map(|a| a.bbox)
                    .collect();
                (id, Some(boxes))
            }
            None => {
                let id = -(i as i64) - 1;
                (id, if row.fracture { None } else { Some(Vec::new()) })
            }
        };
        corpus.push(CorpusImage {
            image: ImageRef {
                id,
                path: row.path.clone(),
            },
            fracture: row.fracture,
            det_gts,
        });
    }
    Ok(corpus)
}

/// An image that could not be processed; the rest of the corpus still
/// evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: i64,
    pub path: String,
    pub stage: String,
    pub message: String,
}

/// Corpus-level evaluation output. `det_summary` is absent when no
/// ground-truth boxes exist anywhere in the corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEvaluation {
    pub det_summary: Option<DetEvalSummary>,
    pub image_summary: ImageLevelSummary,
    pub class_report: ClassReport,
    pub per_image: Vec<PipelineResult>,
    pub failures: Vec<ImageFailure>,
}

/// Evaluates a corpus with one detector invocation and one classifier
/// invocation. Per-image failures (unreadable images, invalid backend
/// records for one image) are isolated into `failures`; backend
/// invocations failing as a whole abort the run.
///
/// Detection metrics treat all categories as one class, use raw
/// detections (before any pipeline gate), and cover only images whose
/// ground truth is known. The operating point uses the configured
/// confidence threshold at IoU 0.5. The classification report and image
/// summary compare the manifest label against whether any detection
/// survived the full pipeline.
pub fn evaluate_corpus(
    corpus: &[CorpusImage],
    source: &dyn ImageSource,
    detector: &mut dyn DetectorBackend,
    classifier: &mut dyn ClassifierBackend,
    cfg: &PipelineConfig,
) -> Result<CorpusEvaluation, PipelineError> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    for c in corpus {
        if !seen.insert(c.image.id) {
            return Err(PipelineError::DuplicateImage(c.image.id));
        }
    }
    let refs: Vec<ImageRef> = corpus.iter().map(|c| c.image.clone()).collect();
    let det_batch = detector.detect_batch(&refs)?;
    if det_batch.len() != corpus.len() {
        return Err(PipelineError::Backend {
            stage: "detector",
            message: format!(
                "batch returned {} entries for {} images",
                det_batch.len(),
                corpus.len()
            ),
        });
    }

    struct Pending {
        corpus_idx: usize,
        staged: StagedDetections,
        crops: Vec<CropQuery>,
    }
    let mut failures = Vec::new();
    let mut pending = Vec::new();
    let fail = |failures: &mut Vec<ImageFailure>, c: &CorpusImage, stage: &str, e: PipelineError| {
        failures.push(ImageFailure {
            image_id: c.image.id,
            path: c.image.path.clone(),
            stage: stage.to_string(),
            message: e.to_string(),
        });
    };
    for (i, (c, raw)) in corpus.iter().zip(&det_batch).enumerate() {
        let staged = match stage_detections(c.image.id, raw, cfg) {
            Ok(s) => s,
            Err(e) => {
                fail(&mut failures, c, "detect", e);
                continue;
            }
        };
        let pixels = match source.load(&c.image) {
            Ok(p) => p,
            Err(e) => {
                fail(&mut failures, c, "load", e);
                continue;
            }
        };
        let crops = match make_crops(c.image.id, &pixels, &staged.kept, cfg.crop_margin) {
            Ok(cr) => cr,
            Err(e) => {
                fail(&mut failures, c, "crop", e);
                continue;
            }
        };
        pending.push(Pending {
            corpus_idx: i,
            staged,
            crops,
        });
    }

    let all_crops: Vec<CropQuery> = pending.iter().flat_map(|p| p.crops.clone()).collect();
    let verdicts = classifier.classify_batch(&all_crops)?;
    if verdicts.len() != all_crops.len() {
        return Err(PipelineError::Backend {
            stage: "classifier",
            message: format!(
                "batch returned {} verdicts for {} crops",
                verdicts.len(),
                all_crops.len()
            ),
        });
    }

    let mut per_image = Vec::new();
    let mut outcomes = Vec::new();
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    let mut eval_images = Vec::new();
    let mut total_gts = 0usize;
    let mut offset = 0usize;
    for p in pending {
        let c = &corpus[p.corpus_idx];
        let slice = &verdicts[offset..offset + p.crops.len()];
        offset += p.crops.len();
        let result = match finish_result(c.image.id, p.staged, &p.crops, slice, &cfg.normal_label)
        {
            Ok(r) => r,
            Err(e) => {
                fail(&mut failures, c, "classify", e);
                continue;
            }
        };
        let survived = !result.surviving.is_empty();
        outcomes.push(ImageOutcome {
            fracture: c.fracture,
            survived,
        });
        truth.push(if c.fracture { "fracture" } else { "normal" }.to_string());
        predicted.push(if survived { "fracture" } else { "normal" }.to_string());
        if let Some(gts) = &c.det_gts {
            total_gts += gts.len();
            eval_images.push(ImageEval {
                image_id: c.image.id,
                dets: det_batch[p.corpus_idx]
                    .iter()
                    .map(|d| Detection::new(d.bbox, d.score, 0))
                    .collect(),
                gts: gts
                    .iter()
                    .map(|&bbox| GtBox {
                        bbox,
                        category_id: 0,
                    })
                    .collect(),
            });
        }
        per_image.push(result);
    }

    let det_summary = if total_gts == 0 {
        None
    } else {
        Some(det_eval_summary(&eval_images, cfg.conf_threshold, 0.5)?)
    };
    let class_set = vec!["fracture".to_string(), "normal".to_string()];
    let class_report = classification_report(&truth, &predicted, &class_set)?;
    Ok(CorpusEvaluation {
        det_summary,
        image_summary: image_level_eval(&outcomes),
        class_report,
        per_image,
        failures,
    })
}
