//! COCO dataset model: parsing, validation, super-category merging,
//! min-count filtering, stratified splitting, crop-manifest extraction,
//! and distribution reporting.
//!
//! Documents are UTF-8 JSON with `images`/`annotations`/`categories`
//! arrays and `bbox = [x, y, w, h]`. Unknown fields are preserved through
//! a parse/serialize round trip. Serialization is deterministic: entries
//! sorted by id, pretty-printed, byte-stable across reruns.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{expand_with_margin, BBox, ImageBounds};
use crate::rng::{label_stream, SplitMix64};

/// Stream tags keeping the split shuffles, the unannotated-image shuffles,
/// and normal-crop sampling on disjoint random sequences for one seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_IMAGE_SPLIT: u64 = 2;
const STREAM_NORMAL_CROPS: u64 = 3;

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("malformed dataset document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: i64 },
    #[error("annotation {ann_id} references missing image id {image_id}")]
    DanglingImage { ann_id: i64, image_id: i64 },
    #[error("annotation {ann_id} references missing category id {category_id}")]
    DanglingCategory { ann_id: i64, category_id: i64 },
    #[error("category {id} has an empty name")]
    EmptyCategoryName { id: i64 },
    #[error("image {id} has non-positive dimensions {width}x{height}")]
    BadImageDims { id: i64, width: u32, height: u32 },
    #[error("invalid annotation {ann_id}: {reason}")]
    BadAnnotation { ann_id: i64, reason: String },
    #[error("category name {name:?} matches both merge rule {first:?} and {second:?}")]
    AmbiguousMerge {
        name: String,
        first: String,
        second: String,
    },
    #[error("merge map line {line} is malformed: {text:?}")]
    BadMergeRule { line: usize, text: String },
    #[error("no normal-labeled images available for normal-crop sampling")]
    NoNormalImages,
    #[error("size model has no samples")]
    EmptySizeModel,
    #[error("label {label:?} cannot be written to a delimited manifest")]
    UnwritableLabel { label: String },
    #[error("crop manifest line {line} is malformed: {text:?}")]
    BadCropLine { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Extremity {
    Hand,
    Wrist,
    #[default]
    Unknown,
}

impl Extremity {
    fn is_unknown(&self) -> bool {
        *self == Extremity::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImageLabel {
    Fracture,
    Normal,
    #[default]
    Unknown,
}

impl ImageLabel {
    fn is_unknown(&self) -> bool {
        *self == ImageLabel::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: i64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Category {
    pub fn new(id: i64, name: &str) -> Self {
        Category {
            id,
            name: name.to_string(),
            supercategory: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: i64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Extremity::is_unknown")]
    pub extremity: Extremity,
    #[serde(default, skip_serializing_if = "ImageLabel::is_unknown")]
    pub image_label: ImageLabel,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ImageRecord {
    pub fn new(id: i64, file_name: &str, width: u32, height: u32) -> Self {
        ImageRecord {
            id,
            file_name: file_name.to_string(),
            width,
            height,
            extremity: Extremity::Unknown,
            image_label: ImageLabel::Unknown,
            extra: BTreeMap::new(),
        }
    }

    pub fn bounds(&self) -> ImageBounds {
        ImageBounds {
            width: self.width,
            height: self.height,
        }
    }
}

fn area_missing() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: i64,
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
    /// Box area in square pixels; filled from the box when the document
    /// omits it.
    #[serde(default = "area_missing")]
    pub area: f64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Annotation {
    pub fn new(id: i64, image_id: i64, category_id: i64, bbox: BBox) -> Self {
        Annotation {
            id,
            image_id,
            category_id,
            area: bbox.area(),
            bbox,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Dataset {
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    #[serde(default)]
    pub categories: Vec<Category>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Dataset {
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self, CocoError> {
        let d = Dataset {
            images,
            annotations,
            categories,
            extra: BTreeMap::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn image(&self, id: i64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category(&self, id: i64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Checks referential integrity, id uniqueness, dimension and box
    /// invariants; reports the first offending id found.
    pub fn validate(&self) -> Result<(), CocoError> {
        let mut image_ids: HashMap<i64, &ImageRecord> = HashMap::new();
        for img in &self.images {
            if image_ids.insert(img.id, img).is_some() {
                return Err(CocoError::DuplicateId {
                    kind: "image",
                    id: img.id,
                });
            }
            if img.width == 0 || img.height == 0 {
                return Err(CocoError::BadImageDims {
                    id: img.id,
                    width: img.width,
                    height: img.height,
                });
            }
        }
        let mut category_ids: HashSet<i64> = HashSet::new();
        for cat in &self.categories {
            if !category_ids.insert(cat.id) {
                return Err(CocoError::DuplicateId {
                    kind: "category",
                    id: cat.id,
                });
            }
            if cat.name.is_empty() {
                return Err(CocoError::EmptyCategoryName { id: cat.id });
            }
        }
        let mut ann_ids: HashSet<i64> = HashSet::new();
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(CocoError::DuplicateId {
                    kind: "annotation",
                    id: ann.id,
                });
            }
            let img = image_ids
                .get(&ann.image_id)
                .ok_or(CocoError::DanglingImage {
                    ann_id: ann.id,
                    image_id: ann.image_id,
                })?;
            if !category_ids.contains(&ann.category_id) {
                return Err(CocoError::DanglingCategory {
                    ann_id: ann.id,
                    category_id: ann.category_id,
                });
            }
            ann.bbox
                .validate()
                .map_err(|e| CocoError::BadAnnotation {
                    ann_id: ann.id,
                    reason: e.to_string(),
                })?;
            if ann.area < 0.0 || !ann.area.is_finite() {
                return Err(CocoError::BadAnnotation {
                    ann_id: ann.id,
                    reason: format!("negative or non-finite area {}", ann.area),
                });
            }
            // Boxes may extend up to 1 px outside their image.
            let (x1, y1, x2, y2) = ann.bbox.to_corners();
            if x1 < -1.0 || y1 < -1.0 || x2 > img.width as f64 + 1.0 || y2 > img.height as f64 + 1.0
            {
                return Err(CocoError::BadAnnotation {
                    ann_id: ann.id,
                    reason: format!(
                        "box extends more than 1 px outside image {} ({}x{})",
                        img.id, img.width, img.height
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Parses and validates a COCO document. Missing `area` fields are filled
/// from the box; extremity and fracture/normal labels come from optional
/// per-image `extremity` / `image_label` fields, defaulting to unknown.
pub fn parse_dataset(document: &str) -> Result<Dataset, CocoError> {
    let mut d: Dataset = serde_json::from_str(document)?;
    for ann in &mut d.annotations {
        if ann.area < 0.0 {
            ann.area = ann.bbox.area();
        }
    }
    d.validate()?;
    Ok(d)
}

/// Serializes a dataset deterministically: collections sorted by id,
/// pretty-printed JSON, trailing newline. `parse ∘ serialize` is the
/// identity on the data model.
pub fn serialize_dataset(d: &Dataset) -> String {
    let mut sorted = d.clone();
    sorted.images.sort_by_key(|i| i.id);
    sorted.annotations.sort_by_key(|a| a.id);
    sorted.categories.sort_by_key(|c| c.id);
    let mut out = serde_json::to_string_pretty(&sorted).expect("dataset serialization");
    out.push('\n');
    out
}

/// One entry of the COCO results format:
/// `{image_id, category_id, bbox, score}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
    pub score: f64,
}

/// Parses a COCO results document (a JSON array of result records).
pub fn parse_results(document: &str) -> Result<Vec<ResultRecord>, CocoError> {
    let records: Vec<ResultRecord> = serde_json::from_str(document)?;
    Ok(records)
}

pub fn serialize_results(records: &[ResultRecord]) -> String {
    let mut out = serde_json::to_string_pretty(records).expect("results serialization");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Super-category merging
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MergeRule {
    /// Category-name pattern; `*` is allowed as a leading and/or trailing
    /// wildcard ("`*Metacarpal Fracture`" matches "1st Metacarpal
    /// Fracture" through "5th Metacarpal Fracture").
    pub pattern: String,
    pub target: String,
}

impl MergeRule {
    pub fn new(pattern: &str, target: &str) -> Self {
        MergeRule {
            pattern: pattern.to_string(),
            target: target.to_string(),
        }
    }

    pub fn matches(&self, name: &str) -> bool {
        let p = self.pattern.as_str();
        match (p.strip_prefix('*'), p.strip_suffix('*')) {
            (Some(rest), _) if rest.ends_with('*') => {
                name.contains(rest.strip_suffix('*').unwrap())
            }
            (Some(suffix), None) => name.ends_with(suffix),
            (None, Some(prefix)) => name.starts_with(prefix),
            (None, None) => name == p,
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeMap {
    pub rules: Vec<MergeRule>,
}

impl MergeMap {
    /// The built-in default: collapse the per-digit metacarpal and phalanx
    /// fracture labels into four super-categories.
    pub fn builtin_default() -> MergeMap {
        let rule = |suffix: &str| MergeRule::new(&format!("*{suffix}"), suffix);
        MergeMap {
            rules: vec![
                rule("Metacarpal Fracture"),
                rule("Distal Phalanx Fracture"),
                rule("Middle Phalanx Fracture"),
                rule("Proximal Phalanx Fracture"),
            ],
        }
    }

    /// Parses a merge-map file: one `pattern -> super-category` rule per
    /// line (a `→` arrow is also accepted); `#` comments and blank lines
    /// are skipped.
    pub fn parse(text: &str) -> Result<MergeMap, CocoError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pattern, target) = line
                .split_once('→')
                .or_else(|| line.split_once("->"))
                .ok_or_else(|| CocoError::BadMergeRule {
                    line: idx + 1,
                    text: raw.to_string(),
                })?;
            let (pattern, target) = (pattern.trim(), target.trim());
            if pattern.is_empty() || target.is_empty() {
                return Err(CocoError::BadMergeRule {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            }
            rules.push(MergeRule::new(pattern, target));
        }
        Ok(MergeMap { rules })
    }

    /// The target for `name`, or `None` when no rule matches. Errors when
    /// two rules match the same concrete name.
    pub fn target_for(&self, name: &str) -> Result<Option<&str>, CocoError> {
        let mut hits = self.rules.iter().filter(|r| r.matches(name));
        match (hits.next(), hits.next()) {
            (None, _) => Ok(None),
            (Some(first), None) => Ok(Some(&first.target)),
            (Some(first), Some(second)) => Err(CocoError::AmbiguousMerge {
                name: name.to_string(),
                first: first.pattern.clone(),
                second: second.pattern.clone(),
            }),
        }
    }
}

/// Replaces categories matching a merge rule with their super-category
/// (reusing an existing category of that name, otherwise creating one with
/// a fresh id) and re-points annotations. Unmatched categories and the
/// total annotation count are untouched.
pub fn merge_supercategories(d: &Dataset, map: &MergeMap) -> Result<Dataset, CocoError> {
    let mut targets: BTreeMap<i64, String> = BTreeMap::new();
    for cat in &d.categories {
        if let Some(target) = map.target_for(&cat.name)? {
            targets.insert(cat.id, target.to_string());
        }
    }

    // A category already bearing a target name keeps its id, unless it is
    // itself merged away to a different name.
    let mut target_ids: BTreeMap<String, i64> = BTreeMap::new();
    for cat in &d.categories {
        let stays = match targets.get(&cat.id) {
            None => true,
            Some(t) => *t == cat.name,
        };
        if stays && targets.values().any(|t| *t == cat.name) {
            target_ids.insert(cat.name.clone(), cat.id);
        }
    }
    let mut next_id = d.categories.iter().map(|c| c.id).max().unwrap_or(0) + 1;
    let mut sorted_cats: Vec<&Category> = d.categories.iter().collect();
    sorted_cats.sort_by_key(|c| c.id);
    for cat in &sorted_cats {
        if let Some(target) = targets.get(&cat.id) {
            if !target_ids.contains_key(target) {
                target_ids.insert(target.clone(), next_id);
                next_id += 1;
            }
        }
    }

    let mut remap: HashMap<i64, i64> = HashMap::new();
    let mut categories: Vec<Category> = Vec::new();
    let mut emitted_targets: HashSet<i64> = HashSet::new();
    for cat in &sorted_cats {
        match targets.get(&cat.id) {
            None => categories.push((*cat).clone()),
            Some(target) => {
                let new_id = target_ids[target];
                remap.insert(cat.id, new_id);
                if emitted_targets.insert(new_id) {
                    if cat.id == new_id {
                        categories.push((*cat).clone());
                    } else {
                        categories.push(Category::new(new_id, target));
                    }
                }
            }
        }
    }

    let annotations = d
        .annotations
        .iter()
        .map(|a| {
            let mut a = a.clone();
            if let Some(new_id) = remap.get(&a.category_id) {
                a.category_id = *new_id;
            }
            a
        })
        .collect();

    let merged = Dataset {
        images: d.images.clone(),
        annotations,
        categories,
        extra: d.extra.clone(),
    };
    merged.validate()?;
    Ok(merged)
}

/// Removes categories with fewer than `min_count` annotations, along with
/// their annotations. Images are retained even when emptied.
pub fn filter_min_count(d: &Dataset, min_count: u64) -> Dataset {
    let mut counts: HashMap<i64, u64> = HashMap::new();
    for ann in &d.annotations {
        *counts.entry(ann.category_id).or_insert(0) += 1;
    }
    let keep: HashSet<i64> = d
        .categories
        .iter()
        .filter(|c| counts.get(&c.id).copied().unwrap_or(0) >= min_count)
        .map(|c| c.id)
        .collect();
    Dataset {
        images: d.images.clone(),
        annotations: d
            .annotations
            .iter()
            .filter(|a| keep.contains(&a.category_id))
            .cloned()
            .collect(),
        categories: d
            .categories
            .iter()
            .filter(|c| keep.contains(&c.id))
            .cloned()
            .collect(),
        extra: d.extra.clone(),
    }
}

/// Removes images failing `keep` (and their annotations); the category
/// table is untouched. Exclusion predicates inspect per-image metadata.
pub fn retain_images<F: Fn(&ImageRecord) -> bool>(d: &Dataset, keep: F) -> Dataset {
    let kept: HashSet<i64> = d
        .images
        .iter()
        .filter(|i| keep(i))
        .map(|i| i.id)
        .collect();
    Dataset {
        images: d.images.iter().filter(|i| kept.contains(&i.id)).cloned().collect(),
        annotations: d
            .annotations
            .iter()
            .filter(|a| kept.contains(&a.image_id))
            .cloned()
            .collect(),
        categories: d.categories.clone(),
        extra: d.extra.clone(),
    }
}

// ---------------------------------------------------------------------------
// Stratified splitting
// ---------------------------------------------------------------------------

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Deterministic stratified split of labeled items into
/// (train indices, validation indices), both sorted ascending.
///
/// Per label: items are shuffled on a label-derived random stream, then the
/// first `round(fraction × n)` go to train (round half up, so singleton
/// labels land in train for fractions ≥ 0.5). Results depend only on
/// (labels, fraction, seed), not on platform or surrounding calls.
pub fn stratified_indices(
    labels: &[&str],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(idx);
    }
    let root = SplitMix64::derive(seed, STREAM_SPLIT);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (label, mut indices) in groups {
        let mut rng = SplitMix64::derive(root.state_of(), label_stream(label));
        rng.shuffle(&mut indices);
        let n_train = round_half_up(fraction * indices.len() as f64).min(indices.len());
        train.extend_from_slice(&indices[..n_train]);
        val.extend_from_slice(&indices[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Splits a dataset at annotation-label granularity: per category,
/// `round(train_fraction × n)` annotations go to train (shuffled
/// deterministically by seed), the rest to validation. Annotated images
/// follow their annotations and may appear in both outputs (a documented
/// leakage trade-off of label-level stratification); unannotated images
/// are split by their fracture/normal image label and land in exactly one
/// output. Both outputs carry the full category table.
pub fn stratified_split(d: &Dataset, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let cat_names: HashMap<i64, &str> = d
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let ann_labels: Vec<&str> = d
        .annotations
        .iter()
        .map(|a| cat_names.get(&a.category_id).copied().unwrap_or(""))
        .collect();
    let (train_idx, val_idx) = stratified_indices(&ann_labels, train_fraction, seed);

    let annotated: HashSet<i64> = d.annotations.iter().map(|a| a.image_id).collect();
    let unannotated: Vec<&ImageRecord> = d
        .images
        .iter()
        .filter(|i| !annotated.contains(&i.id))
        .collect();
    let img_labels: Vec<String> = unannotated
        .iter()
        .map(|i| format!("image:{:?}", i.image_label))
        .collect();
    let img_label_refs: Vec<&str> = img_labels.iter().map(|s| s.as_str()).collect();
    let (img_train_idx, _) = stratified_indices(
        &img_label_refs,
        train_fraction,
        SplitMix64::derive(seed, STREAM_IMAGE_SPLIT).state_of(),
    );
    let img_train: HashSet<i64> = img_train_idx.iter().map(|&i| unannotated[i].id).collect();

    let side = |idx: &[usize], train_side: bool| -> Dataset {
        let annotations: Vec<Annotation> =
            idx.iter().map(|&i| d.annotations[i].clone()).collect();
        let referenced: HashSet<i64> = annotations.iter().map(|a| a.image_id).collect();
        let images = d
            .images
            .iter()
            .filter(|i| {
                if annotated.contains(&i.id) {
                    referenced.contains(&i.id)
                } else {
                    img_train.contains(&i.id) == train_side
                }
            })
            .cloned()
            .collect();
        Dataset {
            images,
            annotations,
            categories: d.categories.clone(),
            extra: d.extra.clone(),
        }
    };
    (side(&train_idx, true), side(&val_idx, false))
}

// ---------------------------------------------------------------------------
// Crop manifests
// ---------------------------------------------------------------------------

/// One classifier-training crop: a margin-expanded box in a source image
/// with its pathology label (or "Normal").
#[derive(Debug, Clone, PartialEq)]
pub struct CropRecord {
    pub source_image_id: i64,
    pub crop_box: BBox,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CropExtraction {
    pub records: Vec<CropRecord>,
    /// Annotation ids skipped because their box has zero area.
    pub skipped_zero_area: Vec<i64>,
}

/// One crop per annotation: box = margin-expanded annotation box clamped
/// to the image, label = category name. Zero-area annotation boxes are
/// skipped and reported.
pub fn extract_crop_manifest(d: &Dataset, margin: f64) -> CropExtraction {
    let images: HashMap<i64, &ImageRecord> = d.images.iter().map(|i| (i.id, i)).collect();
    let cats: HashMap<i64, &str> = d
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let mut out = CropExtraction::default();
    for ann in &d.annotations {
        if ann.bbox.area() <= 0.0 {
            out.skipped_zero_area.push(ann.id);
            continue;
        }
        let img = images[&ann.image_id];
        out.records.push(CropRecord {
            source_image_id: ann.image_id,
            crop_box: expand_with_margin(&ann.bbox, margin, img.bounds()),
            label: cats[&ann.category_id].to_string(),
        });
    }
    out
}

/// Empirical width/height distribution, resampled uniformly; used to give
/// normal crops the same size statistics as the fracture crops.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeModel {
    sizes: Vec<(f64, f64)>,
}

impl SizeModel {
    pub fn from_sizes(sizes: Vec<(f64, f64)>) -> Result<Self, CocoError> {
        if sizes.is_empty() {
            return Err(CocoError::EmptySizeModel);
        }
        Ok(SizeModel { sizes })
    }

    pub fn from_crop_records(records: &[CropRecord]) -> Result<Self, CocoError> {
        Self::from_sizes(
            records
                .iter()
                .map(|r| (r.crop_box.w, r.crop_box.h))
                .collect(),
        )
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> (f64, f64) {
        self.sizes[rng.below(self.sizes.len() as u64) as usize]
    }

    /// Marginal quantiles (width, height) at `q ∈ [0, 1]`, nearest-rank.
    pub fn quantile(&self, q: f64) -> (f64, f64) {
        let mut ws: Vec<f64> = self.sizes.iter().map(|s| s.0).collect();
        let mut hs: Vec<f64> = self.sizes.iter().map(|s| s.1).collect();
        ws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((q * ws.len() as f64).ceil() as usize).clamp(1, ws.len()) - 1;
        (ws[rank], hs[rank])
    }
}

/// Samples `n` "Normal"-labeled crops: positions uniform within
/// normal-labeled images, sizes drawn from `size_model`, clamped to
/// bounds; deterministic for a fixed seed. Errors when `n > 0` and no
/// normal images exist.
pub fn sample_normal_crops(
    d: &Dataset,
    n: u64,
    size_model: &SizeModel,
    seed: u64,
) -> Result<Vec<CropRecord>, CocoError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut normals: Vec<&ImageRecord> = d
        .images
        .iter()
        .filter(|i| i.image_label == ImageLabel::Normal)
        .collect();
    normals.sort_by_key(|i| i.id);
    if normals.is_empty() {
        return Err(CocoError::NoNormalImages);
    }
    let mut rng = SplitMix64::derive(seed, STREAM_NORMAL_CROPS);
    let mut records = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let img = normals[rng.below(normals.len() as u64) as usize];
        let (sw, sh) = size_model.sample(&mut rng);
        let w = sw.min(img.width as f64);
        let h = sh.min(img.height as f64);
        let x = rng.next_f64() * (img.width as f64 - w);
        let y = rng.next_f64() * (img.height as f64 - h);
        records.push(CropRecord {
            source_image_id: img.id,
            crop_box: BBox::new(x, y, w, h),
            label: "Normal".to_string(),
        });
    }
    Ok(records)
}

const CROP_MANIFEST_HEADER: &str = "source_image_id,x,y,w,h,label";

/// Renders crop records as delimited text with the fixed column order
/// `source_image_id,x,y,w,h,label` (header line included).
pub fn render_crop_manifest(records: &[CropRecord]) -> Result<String, CocoError> {
    let mut out = String::from(CROP_MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        if r.label.contains(',') || r.label.contains('\n') {
            return Err(CocoError::UnwritableLabel {
                label: r.label.clone(),
            });
        }
        let b = &r.crop_box;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.source_image_id, b.x, b.y, b.w, b.h, r.label
        ));
    }
    Ok(out)
}

pub fn parse_crop_manifest(text: &str) -> Result<Vec<CropRecord>, CocoError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (idx == 0 && line == CROP_MANIFEST_HEADER) {
            continue;
        }
        let bad = || CocoError::BadCropLine {
            line: idx + 1,
            text: raw.to_string(),
        };
        let fields: Vec<&str> = line.splitn(6, ',').collect();
        if fields.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        records.push(CropRecord {
            source_image_id: fields[0].trim().parse::<i64>().map_err(|_| bad())?,
            crop_box: BBox::new(num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?),
            label: fields[5].trim().to_string(),
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Distribution reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub name: String,
    pub count: u64,
    /// Share of the total in percent, exact to the arithmetic
    /// `100 × count / total`.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub hand_fracture: u64,
    pub hand_normal: u64,
    pub wrist_fracture: u64,
    pub wrist_normal: u64,
    /// Images with unknown extremity or unknown fracture/normal label.
    pub other_images: u64,
    pub total_images: u64,
    pub categories: Vec<CategoryCount>,
    pub total_annotations: u64,
}

fn percentify(counts: Vec<(String, u64)>) -> Vec<CategoryCount> {
    let total: u64 = counts.iter().map(|(_, c)| c).sum();
    let mut out: Vec<CategoryCount> = counts
        .into_iter()
        .map(|(name, count)| CategoryCount {
            percent: if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            },
            name,
            count,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    out
}

/// Image counts by (extremity, fracture/normal) and annotation counts per
/// category with percentages.
pub fn distribution_report(d: &Dataset) -> DistributionReport {
    let mut report = DistributionReport {
        hand_fracture: 0,
        hand_normal: 0,
        wrist_fracture: 0,
        wrist_normal: 0,
        other_images: 0,
        total_images: d.images.len() as u64,
        categories: Vec::new(),
        total_annotations: d.annotations.len() as u64,
    };
    for img in &d.images {
        match (img.extremity, img.image_label) {
            (Extremity::Hand, ImageLabel::Fracture) => report.hand_fracture += 1,
            (Extremity::Hand, ImageLabel::Normal) => report.hand_normal += 1,
            (Extremity::Wrist, ImageLabel::Fracture) => report.wrist_fracture += 1,
            (Extremity::Wrist, ImageLabel::Normal) => report.wrist_normal += 1,
            _ => report.other_images += 1,
        }
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for cat in &d.categories {
        counts.entry(cat.name.as_str()).or_insert(0);
    }
    let names: HashMap<i64, &str> = d
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    for ann in &d.annotations {
        if let Some(name) = names.get(&ann.category_id) {
            *counts.entry(name).or_insert(0) += 1;
        }
    }
    report.categories = percentify(
        counts
            .into_iter()
            .map(|(name, count)| (name.to_string(), count))
            .collect(),
    );
    report
}

/// Label counts and percentages over a crop list (the classifier-side
/// distribution, "Normal" included).
pub fn crop_distribution(records: &[CropRecord]) -> Vec<CategoryCount> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        *counts.entry(r.label.as_str()).or_insert(0) += 1;
    }
    percentify(
        counts
            .into_iter()
            .map(|(name, count)| (name.to_string(), count))
            .collect(),
    )
}

pub fn render_distribution_report(r: &DistributionReport) -> String {
    let mut out = String::new();
    out.push_str("images\n");
    out.push_str(&format!("  hand fracture   {}\n", r.hand_fracture));
    out.push_str(&format!("  hand normal     {}\n", r.hand_normal));
    out.push_str(&format!("  wrist fracture  {}\n", r.wrist_fracture));
    out.push_str(&format!("  wrist normal    {}\n", r.wrist_normal));
    out.push_str(&format!("  other           {}\n", r.other_images));
    out.push_str(&format!("  total           {}\n", r.total_images));
    out.push_str(&format!("annotations ({} total)\n", r.total_annotations));
    for c in &r.categories {
        out.push_str(&format!("  {:<32} {:>7}  {:>6.2}%\n", c.name, c.count, c.percent));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Dataset {
        Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 100, 100)],
            vec![Annotation::new(10, 1, 5, BBox::new(10.0, 10.0, 20.0, 20.0))],
            vec![Category::new(5, "Radius Fracture")],
        )
        .unwrap()
    }

    #[test]
    fn parse_minimal_document() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.pgm", "width": 100, "height": 100}],
            "annotations": [{"id": 10, "image_id": 1, "category_id": 5, "bbox": [10, 10, 20, 20]}],
            "categories": [{"id": 5, "name": "Radius Fracture"}]
        }"#;
        let d = parse_dataset(doc).unwrap();
        assert_eq!((d.images.len(), d.annotations.len(), d.categories.len()), (1, 1, 1));
        assert_eq!(d.annotations[0].area, 400.0);
        assert_eq!(d.images[0].extremity, Extremity::Unknown);
    }

    #[test]
    fn dangling_image_reports_offending_id() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.pgm", "width": 100, "height": 100}],
            "annotations": [{"id": 10, "image_id": 99, "category_id": 5, "bbox": [0, 0, 5, 5]}],
            "categories": [{"id": 5, "name": "Radius Fracture"}]
        }"#;
        let err = parse_dataset(doc).unwrap_err();
        assert!(err.to_string().contains("99"), "got: {err}");
    }

    #[test]
    fn duplicate_image_id_rejected() {
        let doc = r#"{
            "images": [
                {"id": 1, "file_name": "a.pgm", "width": 10, "height": 10},
                {"id": 1, "file_name": "b.pgm", "width": 10, "height": 10}
            ],
            "annotations": [],
            "categories": []
        }"#;
        let err = parse_dataset(doc).unwrap_err();
        assert!(err.to_string().contains("duplicate image id 1"), "got: {err}");
    }

    #[test]
    fn round_trip_preserves_unknown_fields() {
        let doc = r#"{
            "info": {"year": 2024},
            "images": [{"id": 1, "file_name": "a.pgm", "width": 100, "height": 100,
                        "extremity": "hand", "image_label": "fracture", "license": 3}],
            "annotations": [{"id": 10, "image_id": 1, "category_id": 5,
                             "bbox": [10, 10, 20, 20], "area": 400.0, "iscrowd": 0}],
            "categories": [{"id": 5, "name": "Radius Fracture", "supercategory": "fracture"}]
        }"#;
        let d = parse_dataset(doc).unwrap();
        assert_eq!(d.images[0].extremity, Extremity::Hand);
        assert_eq!(d.images[0].extra["license"], serde_json::json!(3));
        let text = serialize_dataset(&d);
        let d2 = parse_dataset(&text).unwrap();
        assert_eq!(d, d2);
        // Byte-stable: serializing again yields identical text.
        assert_eq!(text, serialize_dataset(&d2));
    }

    #[test]
    fn empty_dataset_serializes_three_arrays() {
        let text = serialize_dataset(&Dataset::default());
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["images"], serde_json::json!([]));
        assert_eq!(v["annotations"], serde_json::json!([]));
        assert_eq!(v["categories"], serde_json::json!([]));
    }

    #[test]
    fn merge_rule_wildcards() {
        assert!(MergeRule::new("*Metacarpal Fracture", "x").matches("1st Metacarpal Fracture"));
        assert!(MergeRule::new("*Metacarpal Fracture", "x").matches("Metacarpal Fracture"));
        assert!(!MergeRule::new("*Metacarpal Fracture", "x").matches("Radius Fracture"));
        assert!(MergeRule::new("Radius*", "x").matches("Radius Styloid Fracture"));
        assert!(MergeRule::new("*Phalanx*", "x").matches("Distal Phalanx Fracture"));
        assert!(MergeRule::new("Exact", "x").matches("Exact"));
        assert!(!MergeRule::new("Exact", "x").matches("Exactly"));
    }

    #[test]
    fn merge_collapses_ordinal_categories() {
        let d = Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 200, 200)],
            vec![
                Annotation::new(1, 1, 11, BBox::new(0.0, 0.0, 10.0, 10.0)),
                Annotation::new(2, 1, 12, BBox::new(20.0, 20.0, 10.0, 10.0)),
            ],
            vec![
                Category::new(11, "1st Metacarpal Fracture"),
                Category::new(12, "2nd Metacarpal Fracture"),
            ],
        )
        .unwrap();
        let merged = merge_supercategories(&d, &MergeMap::builtin_default()).unwrap();
        assert_eq!(merged.categories.len(), 1);
        assert_eq!(merged.categories[0].name, "Metacarpal Fracture");
        assert_eq!(merged.annotations.len(), 2);
        let target = merged.categories[0].id;
        assert!(merged.annotations.iter().all(|a| a.category_id == target));
    }

    #[test]
    fn merge_with_empty_map_is_identity() {
        let d = minimal();
        assert_eq!(merge_supercategories(&d, &MergeMap::default()).unwrap(), d);
    }

    #[test]
    fn merge_reuses_existing_target_category() {
        let d = Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 200, 200)],
            vec![
                Annotation::new(1, 1, 7, BBox::new(0.0, 0.0, 10.0, 10.0)),
                Annotation::new(2, 1, 11, BBox::new(20.0, 20.0, 10.0, 10.0)),
            ],
            vec![
                Category::new(7, "Metacarpal Fracture"),
                Category::new(11, "3rd Metacarpal Fracture"),
            ],
        )
        .unwrap();
        let merged = merge_supercategories(&d, &MergeMap::builtin_default()).unwrap();
        assert_eq!(merged.categories.len(), 1);
        assert_eq!(merged.categories[0].id, 7);
        assert!(merged.annotations.iter().all(|a| a.category_id == 7));
    }

    #[test]
    fn ambiguous_rules_error() {
        let map = MergeMap {
            rules: vec![
                MergeRule::new("*Fracture", "A"),
                MergeRule::new("Radius*", "B"),
            ],
        };
        let err = map.target_for("Radius Fracture").unwrap_err();
        assert!(err.to_string().contains("matches both"), "got: {err}");
    }

    #[test]
    fn merge_map_parses_rules_and_comments() {
        let text = "# default rules\n*Metacarpal Fracture -> Metacarpal Fracture\n\n*Distal Phalanx Fracture → Distal Phalanx Fracture\n";
        let map = MergeMap::parse(text).unwrap();
        assert_eq!(map.rules.len(), 2);
        assert_eq!(map.rules[1].target, "Distal Phalanx Fracture");
        assert!(MergeMap::parse("no arrow here").is_err());
    }

    #[test]
    fn filter_removes_sparse_categories() {
        let mut anns = Vec::new();
        for i in 0..99 {
            anns.push(Annotation::new(i, 1, 1, BBox::new(0.0, 0.0, 5.0, 5.0)));
        }
        for i in 99..199 {
            anns.push(Annotation::new(i, 1, 2, BBox::new(0.0, 0.0, 5.0, 5.0)));
        }
        let d = Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 100, 100)],
            anns,
            vec![Category::new(1, "Rare"), Category::new(2, "Common")],
        )
        .unwrap();
        let f = filter_min_count(&d, 100);
        assert_eq!(f.categories.len(), 1);
        assert_eq!(f.categories[0].name, "Common");
        assert_eq!(f.annotations.len(), 100);
        assert_eq!(f.images.len(), 1);
        // min_count 0 is the identity.
        assert_eq!(filter_min_count(&d, 0), d);
    }

    #[test]
    fn stratified_counts_are_exact() {
        let labels: Vec<&str> = std::iter::repeat("A").take(10).collect();
        let (train, val) = stratified_indices(&labels, 0.8, 42);
        assert_eq!((train.len(), val.len()), (8, 2));
        // Singleton labels go to train.
        let (t1, v1) = stratified_indices(&["solo"], 0.8, 42);
        assert_eq!((t1.len(), v1.len()), (1, 0));
    }

    #[test]
    fn stratified_split_partitions_annotations() {
        let mut anns = Vec::new();
        for i in 0..20 {
            anns.push(Annotation::new(i, 1, 1, BBox::new(0.0, 0.0, 5.0, 5.0)));
        }
        for i in 20..30 {
            anns.push(Annotation::new(i, 1, 2, BBox::new(10.0, 10.0, 5.0, 5.0)));
        }
        let d = Dataset::new(
            vec![
                ImageRecord::new(1, "a.pgm", 100, 100),
                {
                    let mut img = ImageRecord::new(2, "n.pgm", 100, 100);
                    img.image_label = ImageLabel::Normal;
                    img
                },
            ],
            anns,
            vec![Category::new(1, "A"), Category::new(2, "B")],
        )
        .unwrap();
        let (train, val) = stratified_split(&d, 0.8, 7);
        assert_eq!(train.annotations.len(), 16 + 8);
        assert_eq!(val.annotations.len(), 4 + 2);
        let mut ids: Vec<i64> = train
            .annotations
            .iter()
            .chain(val.annotations.iter())
            .map(|a| a.id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..30).collect::<Vec<_>>());
        // The unannotated normal image lands in exactly one side.
        let in_train = train.images.iter().any(|i| i.id == 2);
        let in_val = val.images.iter().any(|i| i.id == 2);
        assert!(in_train ^ in_val);
        // Deterministic given the seed.
        let (train2, val2) = stratified_split(&d, 0.8, 7);
        assert_eq!(train, train2);
        assert_eq!(val, val2);
    }

    #[test]
    fn crop_manifest_from_annotation() {
        let d = minimal();
        let ex = extract_crop_manifest(&d, 0.25);
        assert_eq!(ex.records.len(), 1);
        assert_eq!(ex.records[0].crop_box, BBox::new(5.0, 5.0, 30.0, 30.0));
        assert_eq!(ex.records[0].label, "Radius Fracture");
        assert!(ex.skipped_zero_area.is_empty());
        // Margin zero copies the annotation boxes.
        let ex0 = extract_crop_manifest(&d, 0.0);
        assert_eq!(ex0.records[0].crop_box, d.annotations[0].bbox);
    }

    #[test]
    fn zero_area_annotations_skipped_and_reported() {
        let d = Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 100, 100)],
            vec![
                Annotation::new(1, 1, 5, BBox::new(10.0, 10.0, 0.0, 20.0)),
                Annotation::new(2, 1, 5, BBox::new(10.0, 10.0, 20.0, 20.0)),
            ],
            vec![Category::new(5, "Radius Fracture")],
        )
        .unwrap();
        let ex = extract_crop_manifest(&d, 0.25);
        assert_eq!(ex.records.len(), 1);
        assert_eq!(ex.skipped_zero_area, vec![1]);
    }

    #[test]
    fn crop_manifest_round_trip() {
        let records = vec![
            CropRecord {
                source_image_id: 3,
                crop_box: BBox::new(5.0, 5.5, 30.0, 30.25),
                label: "Radius Fracture".to_string(),
            },
            CropRecord {
                source_image_id: 4,
                crop_box: BBox::new(0.0, 0.0, 12.0, 9.0),
                label: "Normal".to_string(),
            },
        ];
        let text = render_crop_manifest(&records).unwrap();
        assert!(text.starts_with("source_image_id,x,y,w,h,label\n"));
        assert_eq!(parse_crop_manifest(&text).unwrap(), records);
    }

    #[test]
    fn normal_crops_deterministic_and_in_bounds() {
        let mut normal = ImageRecord::new(2, "n.pgm", 120, 80);
        normal.image_label = ImageLabel::Normal;
        let d = Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 100, 100), normal],
            vec![],
            vec![],
        )
        .unwrap();
        let model = SizeModel::from_sizes(vec![(30.0, 40.0), (200.0, 10.0)]).unwrap();
        let crops = sample_normal_crops(&d, 50, &model, 9).unwrap();
        assert_eq!(crops.len(), 50);
        for c in &crops {
            assert_eq!(c.label, "Normal");
            assert_eq!(c.source_image_id, 2);
            let (x1, y1, x2, y2) = c.crop_box.to_corners();
            assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 120.0 && y2 <= 80.0);
        }
        assert_eq!(crops, sample_normal_crops(&d, 50, &model, 9).unwrap());
        assert!(sample_normal_crops(&d, 0, &model, 9).unwrap().is_empty());
        let no_normals = minimal();
        assert!(matches!(
            sample_normal_crops(&no_normals, 5, &model, 9),
            Err(CocoError::NoNormalImages)
        ));
    }

    #[test]
    fn distribution_report_counts_and_percentages() {
        let mut images = Vec::new();
        let mut id = 0;
        let mut push = |n: u64, e: Extremity, l: ImageLabel, images: &mut Vec<ImageRecord>| {
            for _ in 0..n {
                id += 1;
                let mut img = ImageRecord::new(id, "x.pgm", 10, 10);
                img.extremity = e;
                img.image_label = l;
                images.push(img);
            }
        };
        push(4, Extremity::Hand, ImageLabel::Fracture, &mut images);
        push(3, Extremity::Hand, ImageLabel::Normal, &mut images);
        push(2, Extremity::Wrist, ImageLabel::Fracture, &mut images);
        push(1, Extremity::Unknown, ImageLabel::Unknown, &mut images);
        let d = Dataset::new(images, vec![], vec![]).unwrap();
        let r = distribution_report(&d);
        assert_eq!(
            (r.hand_fracture, r.hand_normal, r.wrist_fracture, r.wrist_normal, r.other_images),
            (4, 3, 2, 0, 1)
        );
        assert_eq!(r.total_images, 10);

        let empty = distribution_report(&Dataset::default());
        assert_eq!(empty.total_images, 0);
        assert_eq!(empty.total_annotations, 0);
        assert!(empty.categories.is_empty());
    }

    #[test]
    fn crop_distribution_percentages_sum_to_100() {
        let rec = |label: &str| CropRecord {
            source_image_id: 1,
            crop_box: BBox::new(0.0, 0.0, 10.0, 10.0),
            label: label.to_string(),
        };
        let records: Vec<CropRecord> = std::iter::repeat(rec("A"))
            .take(3)
            .chain(std::iter::repeat(rec("B")).take(1))
            .collect();
        let dist = crop_distribution(&records);
        assert_eq!(dist[0].name, "A");
        assert_eq!(dist[0].count, 3);
        assert!((dist[0].percent - 75.0).abs() < 1e-12);
        let sum: f64 = dist.iter().map(|c| c.percent).sum();
        assert!((sum - 100.0).abs() < 0.01);
    }

    #[test]
    fn retain_images_drops_annotations_of_excluded_images() {
        let mut tagged = ImageRecord::new(2, "b.pgm", 100, 100);
        tagged
            .extra
            .insert("tags".to_string(), serde_json::json!(["cast"]));
        let d = Dataset::new(
            vec![ImageRecord::new(1, "a.pgm", 100, 100), tagged],
            vec![
                Annotation::new(1, 1, 5, BBox::new(0.0, 0.0, 10.0, 10.0)),
                Annotation::new(2, 2, 5, BBox::new(0.0, 0.0, 10.0, 10.0)),
            ],
            vec![Category::new(5, "Radius Fracture")],
        )
        .unwrap();
        let kept = retain_images(&d, |img| {
            !img.extra
                .get("tags")
                .and_then(|t| t.as_array())
                .map(|t| t.iter().any(|v| v == "cast"))
                .unwrap_or(false)
        });
        assert_eq!(kept.images.len(), 1);
        assert_eq!(kept.annotations.len(), 1);
        assert_eq!(kept.categories.len(), 1);
    }
}
