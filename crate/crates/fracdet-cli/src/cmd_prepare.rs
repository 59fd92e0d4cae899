//! `fracdet prepare`: the dataset preparation chain.
//!
//! merge supercategories, drop rare categories, extract margin-expanded
//! classifier crops, sample size-matched Normal crops, and emit a
//! stratified train/validation split of both the COCO dataset and the
//! combined crop list, plus a prep report documenting every merge and
//! removal. All outputs are deterministic for a fixed seed.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use fracdet_core::coco::{
    crop_distribution, extract_crop_manifest, filter_min_count, merge_supercategories,
    parse_dataset, render_crop_manifest, sample_normal_crops, serialize_dataset,
    stratified_indices, stratified_split, CategoryCount, CropRecord, Dataset, MergeMap, SizeModel,
};
use serde::Serialize;

use crate::failure::{ensure_dir, read_input, write_output, CmdResult, Failure};

/// Prepare a COCO dataset for training: merge, filter, crop, split.
#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// COCO dataset document to prepare
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory (train/val datasets, crop manifests, prep report)
    #[arg(long)]
    pub out: PathBuf,
    /// Merge-map file (pattern -> target per line); built-in phalanx and
    /// metacarpal rules when absent
    #[arg(long)]
    pub merge_map: Option<PathBuf>,
    /// Drop categories with fewer annotations than this
    #[arg(long, default_value_t = 100)]
    pub min_count: u64,
    /// Crop margin as a fraction of box size on each side
    #[arg(long, default_value_t = 0.25)]
    pub margin: f64,
    /// Number of Normal crops to sample (default: 15% of fracture crops)
    #[arg(long)]
    pub normals: Option<u64>,
    /// Fraction of each label assigned to the training side
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Seed for every random choice in the run
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
}

#[derive(Serialize)]
struct MergedCategory {
    from: String,
    to: String,
    annotations: u64,
}

#[derive(Serialize)]
struct RemovedCategory {
    name: String,
    annotations: u64,
}

#[derive(Serialize)]
struct PrepParameters {
    min_count: u64,
    margin: f64,
    normal_crops: u64,
    train_fraction: f64,
    seed: u64,
}

#[derive(Serialize)]
struct DatasetCounts {
    images: usize,
    annotations: usize,
    categories: usize,
}

#[derive(Serialize)]
struct CropCounts {
    fracture: usize,
    normal: usize,
    train: usize,
    val: usize,
}

#[derive(Serialize)]
struct PrepReport {
    parameters: PrepParameters,
    input: DatasetCounts,
    merged: Vec<MergedCategory>,
    removed: Vec<RemovedCategory>,
    kept_categories: Vec<String>,
    skipped_zero_area_annotations: Vec<i64>,
    crops: CropCounts,
    crop_distribution: Vec<CategoryCount>,
    train: DatasetCounts,
    val: DatasetCounts,
}

fn counts_of(d: &Dataset) -> DatasetCounts {
    DatasetCounts {
        images: d.images.len(),
        annotations: d.annotations.len(),
        categories: d.categories.len(),
    }
}

fn annotation_counts_by_name(d: &Dataset) -> BTreeMap<String, u64> {
    let names: BTreeMap<i64, &str> = d
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let mut counts: BTreeMap<String, u64> = d
        .categories
        .iter()
        .map(|c| (c.name.clone(), 0))
        .collect();
    for ann in &d.annotations {
        if let Some(name) = names.get(&ann.category_id) {
            *counts.entry((*name).to_string()).or_insert(0) += 1;
        }
    }
    counts
}

fn select(records: &[CropRecord], idx: &[usize]) -> Vec<CropRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

pub fn run(args: PrepareArgs) -> CmdResult {
    if !(args.margin.is_finite() && args.margin >= 0.0) {
        return Err(Failure::input(anyhow!(
            "--margin must be non-negative, got {}",
            args.margin
        )));
    }
    if !(args.train_fraction.is_finite() && (0.0..=1.0).contains(&args.train_fraction)) {
        return Err(Failure::input(anyhow!(
            "--train-fraction must be in [0, 1], got {}",
            args.train_fraction
        )));
    }

    let text = read_input(&args.dataset)?;
    let dataset = parse_dataset(&text).map_err(Failure::input)?;
    let map = match &args.merge_map {
        Some(path) => MergeMap::parse(&read_input(path)?).map_err(Failure::input)?,
        None => MergeMap::builtin_default(),
    };

    let source_counts = annotation_counts_by_name(&dataset);
    let merged_dataset = merge_supercategories(&dataset, &map).map_err(Failure::input)?;
    let mut merged = Vec::new();
    for cat in &dataset.categories {
        if let Some(target) = map.target_for(&cat.name).map_err(Failure::input)? {
            if target != cat.name {
                merged.push(MergedCategory {
                    from: cat.name.clone(),
                    to: target.to_string(),
                    annotations: source_counts.get(&cat.name).copied().unwrap_or(0),
                });
            }
        }
    }
    merged.sort_by(|a, b| a.from.cmp(&b.from));

    let merged_counts = annotation_counts_by_name(&merged_dataset);
    let filtered = filter_min_count(&merged_dataset, args.min_count);
    let kept: Vec<String> = {
        let mut names: Vec<String> = filtered.categories.iter().map(|c| c.name.clone()).collect();
        names.sort();
        names
    };
    let mut removed: Vec<RemovedCategory> = merged_dataset
        .categories
        .iter()
        .filter(|c| !kept.contains(&c.name))
        .map(|c| RemovedCategory {
            name: c.name.clone(),
            annotations: merged_counts.get(&c.name).copied().unwrap_or(0),
        })
        .collect();
    removed.sort_by(|a, b| a.name.cmp(&b.name));

    let extraction = extract_crop_manifest(&filtered, args.margin);
    let n_normals = args
        .normals
        .unwrap_or_else(|| (extraction.records.len() as f64 * 0.15).round() as u64);
    let normal_records = if n_normals == 0 {
        Vec::new()
    } else {
        let size_model = SizeModel::from_crop_records(&extraction.records)
            .map_err(|e| Failure::input(anyhow!("cannot model Normal crop sizes: {e}")))?;
        sample_normal_crops(&filtered, n_normals, &size_model, args.seed)
            .map_err(Failure::input)?
    };

    let mut all_crops = extraction.records.clone();
    all_crops.extend(normal_records.iter().cloned());
    let labels: Vec<&str> = all_crops.iter().map(|r| r.label.as_str()).collect();
    let (train_idx, val_idx) = stratified_indices(&labels, args.train_fraction, args.seed);
    let crops_train = select(&all_crops, &train_idx);
    let crops_val = select(&all_crops, &val_idx);

    let (train, val) = stratified_split(&filtered, args.train_fraction, args.seed);

    let report = PrepReport {
        parameters: PrepParameters {
            min_count: args.min_count,
            margin: args.margin,
            normal_crops: n_normals,
            train_fraction: args.train_fraction,
            seed: args.seed,
        },
        input: counts_of(&dataset),
        merged,
        removed,
        kept_categories: kept,
        skipped_zero_area_annotations: extraction.skipped_zero_area.clone(),
        crops: CropCounts {
            fracture: extraction.records.len(),
            normal: normal_records.len(),
            train: crops_train.len(),
            val: crops_val.len(),
        },
        crop_distribution: crop_distribution(&all_crops),
        train: counts_of(&train),
        val: counts_of(&val),
    };

    ensure_dir(&args.out)?;
    write_output(&args.out.join("train.json"), serialize_dataset(&train))?;
    write_output(&args.out.join("val.json"), serialize_dataset(&val))?;
    write_output(
        &args.out.join("crops_train.csv"),
        render_crop_manifest(&crops_train).map_err(Failure::input)?,
    )?;
    write_output(
        &args.out.join("crops_val.csv"),
        render_crop_manifest(&crops_val).map_err(Failure::input)?,
    )?;
    let mut doc = serde_json::to_string_pretty(&report).expect("report serialization");
    doc.push('\n');
    write_output(&args.out.join("prep_report.json"), doc)?;

    println!(
        "prepared {} fracture + {} Normal crops over {} categories ({} train / {} val)",
        report.crops.fracture,
        report.crops.normal,
        report.kept_categories.len(),
        report.crops.train,
        report.crops.val
    );
    for c in &report.crop_distribution {
        println!("  {:<32} {:>7}  {:>6.2}%", c.name, c.count, c.percent);
    }
    Ok(())
}
