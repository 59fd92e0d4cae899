//! Synthetic fixture corpora shaped like the study's data: the overall
//! hand/wrist distribution, the 37-pathology label inventory that merges
//! and filters down to 13 + Normal, a fully hand-traced 3-image corpus
//! with known expected outputs, and a large randomized corpus for
//! conservation checks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fracdet_core::coco::{
    serialize_dataset, serialize_results, Annotation, Category, Dataset, Extremity, ImageLabel,
    ImageRecord, ResultRecord,
};
use fracdet_core::geometry::BBox;
use fracdet_core::imgproc::{write_pgm, GrayImage};
use fracdet_core::pipeline::{
    serialize_crop_labels, Classification, ClassifierBackend, CorpusImage, CropLabelRecord,
    CropQuery, ImageRef, MemorySource, PipelineError,
};
use fracdet_core::rng::SplitMix64;

use crate::gen;

pub const TABLE1_HAND_FRACTURE: u64 = 10_374;
pub const TABLE1_HAND_NORMAL: u64 = 3_797;
pub const TABLE1_WRIST_FRACTURE: u64 = 9_170;
pub const TABLE1_WRIST_NORMAL: u64 = 3_340;

/// An annotation-free dataset with the full published hand/wrist
/// fracture/normal image distribution (26,681 images).
pub fn table1_dataset() -> Dataset {
    let blocks = [
        (Extremity::Hand, ImageLabel::Fracture, TABLE1_HAND_FRACTURE),
        (Extremity::Hand, ImageLabel::Normal, TABLE1_HAND_NORMAL),
        (Extremity::Wrist, ImageLabel::Fracture, TABLE1_WRIST_FRACTURE),
        (Extremity::Wrist, ImageLabel::Normal, TABLE1_WRIST_NORMAL),
    ];
    let mut images = Vec::new();
    let mut id = 0i64;
    for (extremity, label, count) in blocks {
        for _ in 0..count {
            id += 1;
            let mut rec = ImageRecord::new(id, &format!("xray_{id:05}.pgm"), 64, 64);
            rec.extremity = extremity;
            rec.image_label = label;
            images.push(rec);
        }
    }
    Dataset::new(images, Vec::new(), Vec::new()).expect("valid synthetic dataset")
}

/// The published final crop distribution: 14 labels (13 pathologies plus
/// Normal) with counts whose shares of the 10,002-crop total reproduce
/// the published percentages exactly at two decimals.
pub fn pathology_share_table() -> Vec<(&'static str, u64)> {
    vec![
        ("Radius Fracture", 2237),
        ("Normal", 1311),
        ("Fracture K-Wire Fixation", 1106),
        ("Metacarpal Fracture", 1004),
        ("Proximal Phalanx Fracture", 844),
        ("Ulna Styloid Fracture", 789),
        ("Fracture Screw Fixation", 753),
        ("Distal Phalanx Fracture", 626),
        ("Ulna Fracture", 515),
        ("Middle Phalanx Fracture", 336),
        ("Scaphoid Fracture", 163),
        ("Avulsion Fracture", 145),
        ("Post OP", 130),
        ("Radius Styloid Fracture", 43),
    ]
}

const DIGITS: [&str; 5] = ["1st", "2nd", "3rd", "4th", "5th"];

/// Standalone pathologies that survive preparation, with instance counts.
fn standalone_kept() -> Vec<(&'static str, usize)> {
    vec![
        ("Radius Fracture", 300),
        ("Ulna Fracture", 180),
        ("Ulna Styloid Fracture", 150),
        ("Radius Styloid Fracture", 110),
        ("Scaphoid Fracture", 140),
        ("Avulsion Fracture", 120),
        ("Post OP", 130),
        ("Fracture K-Wire Fixation", 160),
        ("Fracture Screw Fixation", 170),
    ]
}

/// Per-digit pathology groups: every digit variant stays under 100
/// instances on its own but each merged super-category clears 100.
fn ordinal_groups() -> Vec<(&'static str, [usize; 5])> {
    vec![
        ("Metacarpal Fracture", [40, 35, 30, 25, 45]),
        ("Proximal Phalanx Fracture", [30, 30, 25, 20, 35]),
        ("Middle Phalanx Fracture", [25, 20, 20, 20, 25]),
        ("Distal Phalanx Fracture", [30, 25, 20, 25, 30]),
    ]
}

/// Unmergeable pathologies under the 100-instance floor; preparation
/// drops all of them.
fn rare_dropped() -> Vec<(&'static str, usize)> {
    vec![
        ("Lunate Fracture", 30),
        ("Triquetrum Fracture", 25),
        ("Pisiform Fracture", 20),
        ("Hamate Fracture", 35),
        ("Capitate Fracture", 28),
        ("Trapezium Fracture", 22),
        ("Trapezoid Fracture", 26),
        ("Barton Fracture", 40),
    ]
}

/// The 13 pathology labels left after merging and filtering, sorted.
pub fn prep_kept_labels() -> Vec<String> {
    let mut names: Vec<String> = standalone_kept()
        .iter()
        .map(|(n, _)| n.to_string())
        .chain(ordinal_groups().iter().map(|(n, _)| n.to_string()))
        .collect();
    names.sort();
    names
}

/// A 37-pathology corpus shaped like the study's label inventory: 9
/// standalone categories that survive, 20 per-digit categories that
/// merge into 4 super-categories, 8 rare categories that get filtered,
/// plus 400 annotation-free normal images for normal-crop sampling.
///
/// One annotation per image; image size 200x200; boxes are seeded
/// two-decimal rectangles.
pub fn thirty_seven_category_corpus(seed: u64) -> Dataset {
    let mut names: Vec<(String, usize)> = standalone_kept()
        .iter()
        .map(|(n, c)| (n.to_string(), *c))
        .collect();
    for (target, counts) in ordinal_groups() {
        for (digit, count) in DIGITS.iter().zip(counts) {
            names.push((format!("{digit} {target}"), count));
        }
    }
    names.extend(rare_dropped().iter().map(|(n, c)| (n.to_string(), *c)));
    assert_eq!(names.len(), 37);

    let mut rng = SplitMix64::derive(seed, 40);
    let mut categories = Vec::new();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_image = 0i64;
    for (cat_idx, (name, count)) in names.iter().enumerate() {
        let cat_id = cat_idx as i64 + 1;
        categories.push(Category::new(cat_id, name));
        for _ in 0..*count {
            next_image += 1;
            let mut img = ImageRecord::new(next_image, &format!("path_{next_image:05}.pgm"), 200, 200);
            img.extremity = if next_image % 2 == 0 {
                Extremity::Hand
            } else {
                Extremity::Wrist
            };
            img.image_label = ImageLabel::Fracture;
            images.push(img);
            let bbox = BBox::new(
                (gen::uniform(&mut rng, 10.0, 150.0) * 100.0).round() / 100.0,
                (gen::uniform(&mut rng, 10.0, 150.0) * 100.0).round() / 100.0,
                (gen::uniform(&mut rng, 12.0, 40.0) * 100.0).round() / 100.0,
                (gen::uniform(&mut rng, 12.0, 40.0) * 100.0).round() / 100.0,
            );
            annotations.push(Annotation::new(next_image, next_image, cat_id, bbox));
        }
    }
    for _ in 0..400 {
        next_image += 1;
        let mut img = ImageRecord::new(next_image, &format!("path_{next_image:05}.pgm"), 200, 200);
        img.extremity = if next_image % 2 == 0 {
            Extremity::Hand
        } else {
            Extremity::Wrist
        };
        img.image_label = ImageLabel::Normal;
        images.push(img);
    }
    Dataset::new(images, annotations, categories).expect("valid synthetic corpus")
}

// ---------------------------------------------------------------------------
// The hand-traced three-image corpus
// ---------------------------------------------------------------------------

/// Every externally observable number for the three-image corpus,
/// derived by hand from the stage definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeImageExpectations {
    pub survivor_image_id: i64,
    pub survivor_bbox: BBox,
    pub survivor_score: f64,
    pub survivor_label: String,
    pub survivor_probability: f64,
    pub survivor_crop: BBox,
    pub ap50: f64,
    pub ap75: f64,
    pub map: f64,
    pub ar100: f64,
    pub op_precision: f64,
    pub op_recall: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone)]
pub struct ThreeImageCorpus {
    pub gt: Dataset,
    pub detections: Vec<ResultRecord>,
    pub crop_labels: Vec<CropLabelRecord>,
    /// File name and pixels for each of the three radiographs.
    pub images: Vec<(String, GrayImage)>,
    pub manifest: String,
    pub expect: ThreeImageExpectations,
}

/// File locations produced by [`ThreeImageCorpus::write_to`].
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub manifest: PathBuf,
    pub gt: PathBuf,
    pub detections: PathBuf,
    pub crop_labels: PathBuf,
    pub images_dir: PathBuf,
}

/// Builds the hand-traced corpus:
///
/// * Image 1 (fracture, gt box 10,10,20,20): a perfect detection at 0.9
///   that survives as "Radius Fracture", an overlapping 0.6 detection
///   suppressed by NMS (IoU 9/11), and a 0.2 detection under the
///   confidence gate.
/// * Image 2 (normal): one 0.5 detection whose crop classifies as
///   Normal and is discarded.
/// * Image 3 (fracture, gt box 30,30,20,20): no detections at all.
///
/// Image-level: tp 1, tn 1, fn 1, fp 0. Detection eval (single class,
/// raw detections): flags TP 0.9, FP 0.6, FP 0.5, FP 0.2 over 2 ground
/// truths, so AP is 51/101 at every IoU threshold.
pub fn three_image_corpus() -> ThreeImageCorpus {
    let mut img1 = ImageRecord::new(1, "img1.pgm", 100, 100);
    img1.extremity = Extremity::Hand;
    img1.image_label = ImageLabel::Fracture;
    let mut img2 = ImageRecord::new(2, "img2.pgm", 100, 100);
    img2.extremity = Extremity::Hand;
    img2.image_label = ImageLabel::Normal;
    let mut img3 = ImageRecord::new(3, "img3.pgm", 100, 100);
    img3.extremity = Extremity::Hand;
    img3.image_label = ImageLabel::Fracture;
    let gt = Dataset::new(
        vec![img1, img2, img3],
        vec![
            Annotation::new(1, 1, 1, BBox::new(10.0, 10.0, 20.0, 20.0)),
            Annotation::new(2, 3, 1, BBox::new(30.0, 30.0, 20.0, 20.0)),
        ],
        vec![Category::new(1, "Fracture")],
    )
    .expect("valid ground truth");

    let detections = vec![
        ResultRecord {
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(10.0, 10.0, 20.0, 20.0),
            score: 0.9,
        },
        ResultRecord {
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(12.0, 10.0, 20.0, 20.0),
            score: 0.6,
        },
        ResultRecord {
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(70.0, 70.0, 10.0, 10.0),
            score: 0.2,
        },
        ResultRecord {
            image_id: 2,
            category_id: 1,
            bbox: BBox::new(40.0, 40.0, 10.0, 10.0),
            score: 0.5,
        },
    ];

    let crop_labels = vec![
        CropLabelRecord {
            image_id: 1,
            bbox: BBox::new(5.0, 5.0, 30.0, 30.0),
            label: "Radius Fracture".to_string(),
            probabilities: [
                ("Radius Fracture".to_string(), 0.8),
                ("Normal".to_string(), 0.2),
            ]
            .into_iter()
            .collect(),
        },
        CropLabelRecord {
            image_id: 2,
            bbox: BBox::new(37.5, 37.5, 15.0, 15.0),
            label: "Normal".to_string(),
            probabilities: [
                ("Normal".to_string(), 0.9),
                ("Radius Fracture".to_string(), 0.1),
            ]
            .into_iter()
            .collect(),
        },
    ];

    let images = (1..=3u32)
        .map(|k| {
            let pixels = GrayImage::from_fn(100, 100, |x, y| ((x + y + 7 * k) % 200) as u8)
                .expect("positive dimensions");
            (format!("img{k}.pgm"), pixels)
        })
        .collect();

    let manifest = "path,label,gt_id\nimg1.pgm,fracture,1\nimg2.pgm,normal,2\nimg3.pgm,fracture,3\n"
        .to_string();

    // Raw-detection flags in score order: TP, FP, FP, FP over 2 gts;
    // only recalls up to 0.5 are reached, at best precision 1.0.
    let ap = 51.0 / 101.0;
    let expect = ThreeImageExpectations {
        survivor_image_id: 1,
        survivor_bbox: BBox::new(10.0, 10.0, 20.0, 20.0),
        survivor_score: 0.9,
        survivor_label: "Radius Fracture".to_string(),
        survivor_probability: 0.8,
        survivor_crop: BBox::new(5.0, 5.0, 30.0, 30.0),
        ap50: ap,
        ap75: ap,
        map: ap,
        ar100: 0.5,
        // Gated detections at 0.3: tp 1 (the 0.9), fp 2 (0.6 and 0.5),
        // fn 1 (image 3's ground truth).
        op_precision: 1.0 / 3.0,
        op_recall: 0.5,
        accuracy: 2.0 / 3.0,
        precision: 1.0,
        recall: 0.5,
    };

    ThreeImageCorpus {
        gt,
        detections,
        crop_labels,
        images,
        manifest,
        expect,
    }
}

impl ThreeImageCorpus {
    /// Writes the manifest, ground truth, detections, crop labels, and
    /// the three `.pgm` images into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<CorpusPaths> {
        let paths = CorpusPaths {
            manifest: dir.join("corpus.csv"),
            gt: dir.join("gt.json"),
            detections: dir.join("detections.json"),
            crop_labels: dir.join("crop_labels.json"),
            images_dir: dir.to_path_buf(),
        };
        std::fs::write(&paths.manifest, &self.manifest)?;
        std::fs::write(&paths.gt, serialize_dataset(&self.gt))?;
        std::fs::write(&paths.detections, serialize_results(&self.detections))?;
        std::fs::write(&paths.crop_labels, serialize_crop_labels(&self.crop_labels))?;
        for (name, pixels) in &self.images {
            std::fs::write(dir.join(name), write_pgm(pixels))?;
        }
        Ok(paths)
    }
}

// ---------------------------------------------------------------------------
// Conservation fixture
// ---------------------------------------------------------------------------

/// A classifier that labels each crop deterministically from its
/// identity (image id plus crop box at two decimals): roughly half the
/// crops get the normal label.
pub struct RuleClassifierBackend {
    pub seed: u64,
    pub normal_label: String,
    pub positive_label: String,
}

impl RuleClassifierBackend {
    pub fn new(seed: u64) -> Self {
        RuleClassifierBackend {
            seed,
            normal_label: "Normal".to_string(),
            positive_label: "Radius Fracture".to_string(),
        }
    }

    /// The verdict this backend will give a crop, exposed so tests can
    /// predict outputs.
    pub fn verdict_for(&self, image_id: i64, crop_box: &BBox) -> bool {
        let b = crop_box.rounded_2dp();
        let mut state = self.seed;
        for v in [
            image_id as u64,
            (b.x * 100.0).round() as i64 as u64,
            (b.y * 100.0).round() as i64 as u64,
            (b.w * 100.0).round() as i64 as u64,
            (b.h * 100.0).round() as i64 as u64,
        ] {
            state = SplitMix64::derive(state, v).state_of();
        }
        SplitMix64::new(state).next_u64() & 1 == 0
    }
}

impl ClassifierBackend for RuleClassifierBackend {
    fn classify_batch(
        &mut self,
        crops: &[CropQuery],
    ) -> Result<Vec<Classification>, PipelineError> {
        Ok(crops
            .iter()
            .map(|c| {
                let normal = self.verdict_for(c.image_id, &c.crop_box);
                let label = if normal {
                    self.normal_label.clone()
                } else {
                    self.positive_label.clone()
                };
                let other = if normal {
                    self.positive_label.clone()
                } else {
                    self.normal_label.clone()
                };
                Classification {
                    label: label.clone(),
                    probabilities: [(label, 0.75), (other, 0.25)].into_iter().collect(),
                }
            })
            .collect())
    }
}

/// A randomized corpus for stage-conservation checks: every image's raw
/// detection count is recorded so tests can verify the stage counters
/// add back up.
pub struct ConservationFixture {
    pub corpus: Vec<CorpusImage>,
    pub source: MemorySource,
    pub detections: Vec<ResultRecord>,
    pub raw_counts: HashMap<i64, usize>,
}

pub fn conservation_fixture(seed: u64, n_images: usize) -> ConservationFixture {
    let mut rng = SplitMix64::derive(seed, 77);
    let mut source = MemorySource::new();
    let mut corpus = Vec::with_capacity(n_images);
    let mut detections = Vec::new();
    let mut raw_counts = HashMap::new();
    for i in 0..n_images {
        let id = i as i64 + 1;
        source.insert(id, gen::rand_gray(&mut rng, 64, 64));
        let n_dets = rng.below(26) as usize;
        raw_counts.insert(id, n_dets);
        for _ in 0..n_dets {
            let x = (gen::uniform(&mut rng, 0.0, 34.0) * 100.0).round() / 100.0;
            let y = (gen::uniform(&mut rng, 0.0, 34.0) * 100.0).round() / 100.0;
            let w = (gen::uniform(&mut rng, 2.0, 30.0) * 100.0).round() / 100.0;
            let h = (gen::uniform(&mut rng, 2.0, 30.0) * 100.0).round() / 100.0;
            detections.push(ResultRecord {
                image_id: id,
                category_id: 1,
                bbox: BBox::new(x, y, w, h),
                score: rng.below(101) as f64 / 100.0,
            });
        }
        let fracture = rng.below(2) == 1;
        let det_gts = if !fracture {
            Some(Vec::new())
        } else if rng.below(2) == 1 {
            Some(
                (0..1 + rng.below(2))
                    .map(|_| {
                        BBox::new(
                            gen::uniform(&mut rng, 0.0, 30.0),
                            gen::uniform(&mut rng, 0.0, 30.0),
                            gen::uniform(&mut rng, 4.0, 30.0),
                            gen::uniform(&mut rng, 4.0, 30.0),
                        )
                    })
                    .collect(),
            )
        } else {
            None
        };
        corpus.push(CorpusImage {
            image: ImageRef {
                id,
                path: format!("img_{id:05}.pgm"),
            },
            fracture,
            det_gts,
        });
    }
    ConservationFixture {
        corpus,
        source,
        detections,
        raw_counts,
    }
}
