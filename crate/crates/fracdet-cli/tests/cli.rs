//! End-to-end tests of the `fracdet` binary: exit codes, output
//! documents, determinism, and kernel behavior through the CLI surface.

use std::path::{Path, PathBuf};
use std::process::Command;

use fracdet_core::coco::{
    parse_crop_manifest, serialize_dataset, Annotation, Category, Dataset, ImageRecord,
};
use fracdet_core::imgproc::{read_pgm, write_pgm};
use fracdet_core::loss::EmbeddingBatch;
use fracdet_core::rng::SplitMix64;
use fracdet_core::{BBox, GrayImage};
use fracdet_testkit::corpora::{table1_dataset, thirty_seven_category_corpus, three_image_corpus};
use fracdet_testkit::gen::rand_gray;
use fracdet_testkit::oracle::{ref_global_hist_eq, ref_supcon};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fracdet(args: &[&str], dir: &Path) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_fracdet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    Run {
        code: output.status.code().expect("exit code"),
        stdout: String::from_utf8(output.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(output.stderr).expect("utf-8 stderr"),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) {
    std::fs::write(path, contents.as_ref()).expect("test file written");
}

fn json_of(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("output file exists"))
        .expect("output file is json")
}

fn field(v: &serde_json::Value, pointer: &str) -> f64 {
    v.pointer(pointer)
        .unwrap_or_else(|| panic!("field {pointer} present"))
        .as_f64()
        .unwrap_or_else(|| panic!("field {pointer} numeric"))
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[test]
fn stats_echoes_extremity_counts() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("data.json"),
        serialize_dataset(&table1_dataset()),
    );
    let run = fracdet(
        &["stats", "--dataset", "data.json", "--out", "out"],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    for needle in ["10374", "3797", "9170", "3340"] {
        assert!(
            run.stdout.contains(needle),
            "stdout missing {needle}: {}",
            run.stdout
        );
    }
    let report = json_of(&dir.path().join("out/stats.json"));
    assert_eq!(report["hand_fracture"], 10374);
    assert_eq!(report["hand_normal"], 3797);
    assert_eq!(report["wrist_fracture"], 9170);
    assert_eq!(report["wrist_normal"], 3340);
    assert_eq!(report["total_images"], 26681);
}

#[test]
fn stats_empty_dataset_reports_zeroes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = Dataset::new(vec![], vec![], vec![]).unwrap();
    write(&dir.path().join("data.json"), serialize_dataset(&empty));
    let run = fracdet(
        &["stats", "--dataset", "data.json", "--out", "out"],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let report = json_of(&dir.path().join("out/stats.json"));
    assert_eq!(report["total_images"], 0);
    assert_eq!(report["total_annotations"], 0);
    assert_eq!(report["categories"].as_array().unwrap().len(), 0);
}

#[test]
fn stats_corrupt_document_exits_2_naming_offender() {
    let dir = tempfile::tempdir().unwrap();
    // Annotation 77 dangles: no image 42 exists.
    let doc = r#"{
        "images": [{"id": 1, "file_name": "a.pgm", "width": 10, "height": 10}],
        "annotations": [{"id": 77, "image_id": 42, "category_id": 5, "bbox": [1, 1, 2, 2]}],
        "categories": [{"id": 5, "name": "Radius Fracture"}]
    }"#;
    write(&dir.path().join("data.json"), doc);
    let run = fracdet(&["stats", "--dataset", "data.json"], dir.path());
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("42"), "stderr: {}", run.stderr);
}

#[test]
fn stats_missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let run = fracdet(&["stats", "--dataset", "nope.json"], dir.path());
    assert_eq!(run.code, 2);
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

fn read_label_counts(path: &Path) -> std::collections::BTreeMap<String, usize> {
    let records = parse_crop_manifest(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for r in records {
        *counts.entry(r.label).or_insert(0) += 1;
    }
    counts
}

#[test]
fn prepare_merges_to_thirteen_categories_plus_normal() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("data.json"),
        serialize_dataset(&thirty_seven_category_corpus(0xC0)),
    );
    let run = fracdet(
        &[
            "prepare",
            "--dataset",
            "data.json",
            "--out",
            "prep",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    let report = json_of(&dir.path().join("prep/prep_report.json"));
    let kept = report["kept_categories"].as_array().unwrap();
    assert_eq!(kept.len(), 13, "kept: {kept:?}");
    let dist = report["crop_distribution"].as_array().unwrap();
    assert_eq!(dist.len(), 14, "13 pathologies + Normal");
    assert!(dist.iter().any(|c| c["name"] == "Normal"));

    // The split must land within one crop of the 80/20 target per label.
    let train = read_label_counts(&dir.path().join("prep/crops_train.csv"));
    let val = read_label_counts(&dir.path().join("prep/crops_val.csv"));
    let mut labels: Vec<&String> = train.keys().chain(val.keys()).collect();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), 14);
    for label in labels {
        let t = *train.get(label).unwrap_or(&0) as f64;
        let v = *val.get(label).unwrap_or(&0) as f64;
        let target = 0.8 * (t + v);
        assert!(
            (t - target).abs() <= 1.0,
            "label {label}: train {t} of {} vs target {target}",
            t + v
        );
    }

    // Train and val datasets parse and carry the 13 kept categories.
    let train_ds = json_of(&dir.path().join("prep/train.json"));
    assert_eq!(train_ds["categories"].as_array().unwrap().len(), 13);
}

#[test]
fn prepare_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("data.json"),
        serialize_dataset(&thirty_seven_category_corpus(0xC1)),
    );
    for out in ["a", "b"] {
        let run = fracdet(
            &[
                "prepare",
                "--dataset",
                "data.json",
                "--out",
                out,
                "--seed",
                "9",
            ],
            dir.path(),
        );
        assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    }
    for name in [
        "train.json",
        "val.json",
        "crops_train.csv",
        "crops_val.csv",
        "prep_report.json",
    ] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

// ---------------------------------------------------------------------------
// eval-det
// ---------------------------------------------------------------------------

#[test]
fn eval_det_matches_hand_traced_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = three_image_corpus();
    corpus.write_to(dir.path()).unwrap();
    let run = fracdet(
        &[
            "eval-det",
            "--gt",
            "gt.json",
            "--results",
            "detections.json",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let summary: serde_json::Value = serde_json::from_str(&run.stdout).expect("stdout is json");
    assert!((field(&summary, "/ap50") - corpus.expect.ap50).abs() < 1e-12);
    assert!((field(&summary, "/ap75") - corpus.expect.ap75).abs() < 1e-12);
    assert!((field(&summary, "/map") - corpus.expect.map).abs() < 1e-12);
    assert!((field(&summary, "/ar100") - corpus.expect.ar100).abs() < 1e-12);
    assert!((field(&summary, "/precision") - corpus.expect.op_precision).abs() < 1e-12);
    assert!((field(&summary, "/recall") - corpus.expect.op_recall).abs() < 1e-12);
    // The written document equals what was printed.
    let doc = std::fs::read_to_string(dir.path().join("out/det_summary.json")).unwrap();
    assert_eq!(doc, run.stdout);
}

#[test]
fn eval_det_perfect_results_score_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let gt = Dataset::new(
        vec![ImageRecord::new(1, "a.pgm", 100, 100)],
        vec![Annotation::new(1, 1, 1, BBox::new(10.0, 10.0, 20.0, 20.0))],
        vec![Category::new(1, "Fracture")],
    )
    .unwrap();
    write(&dir.path().join("gt.json"), serialize_dataset(&gt));
    write(
        &dir.path().join("res.json"),
        r#"[{"image_id": 1, "category_id": 1, "bbox": [10, 10, 20, 20], "score": 0.9}]"#,
    );
    let run = fracdet(
        &["eval-det", "--gt", "gt.json", "--results", "res.json"],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let summary: serde_json::Value = serde_json::from_str(&run.stdout).unwrap();
    for key in ["/ap50", "/ap75", "/map", "/ar100", "/precision", "/recall"] {
        assert_eq!(field(&summary, key), 1.0, "{key}");
    }
}

#[test]
fn eval_det_without_ground_truth_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let gt = Dataset::new(
        vec![ImageRecord::new(1, "a.pgm", 100, 100)],
        vec![],
        vec![Category::new(1, "Fracture")],
    )
    .unwrap();
    write(&dir.path().join("gt.json"), serialize_dataset(&gt));
    write(&dir.path().join("res.json"), "[]");
    let run = fracdet(
        &["eval-det", "--gt", "gt.json", "--results", "res.json"],
        dir.path(),
    );
    assert_eq!(run.code, 3, "stderr: {}", run.stderr);
}

#[test]
fn eval_det_unknown_result_image_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = three_image_corpus();
    corpus.write_to(dir.path()).unwrap();
    write(
        &dir.path().join("res.json"),
        r#"[{"image_id": 999, "category_id": 1, "bbox": [1, 1, 2, 2], "score": 0.5}]"#,
    );
    let run = fracdet(
        &["eval-det", "--gt", "gt.json", "--results", "res.json"],
        dir.path(),
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("999"), "stderr: {}", run.stderr);
}

#[test]
fn eval_det_bad_threshold_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = three_image_corpus();
    corpus.write_to(dir.path()).unwrap();
    let run = fracdet(
        &[
            "eval-det",
            "--gt",
            "gt.json",
            "--results",
            "detections.json",
            "--iou",
            "1.5",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 2);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn run_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "run",
        "--manifest",
        "corpus.csv",
        "--gt",
        "gt.json",
        "--detections",
        "detections.json",
        "--crop-labels",
        "crop_labels.json",
        "--out",
        "out",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn run_reproduces_hand_traced_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = three_image_corpus();
    corpus.write_to(dir.path()).unwrap();
    let run = fracdet(&run_args(&["--overlay"]), dir.path());
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    let summary = json_of(&dir.path().join("out/run_summary.json"));
    let e = &corpus.expect;
    assert!((field(&summary, "/det_summary/ap50") - e.ap50).abs() < 1e-12);
    assert!((field(&summary, "/det_summary/ap75") - e.ap75).abs() < 1e-12);
    assert!((field(&summary, "/det_summary/map") - e.map).abs() < 1e-12);
    assert!((field(&summary, "/det_summary/ar100") - e.ar100).abs() < 1e-12);
    assert!((field(&summary, "/det_summary/precision") - e.op_precision).abs() < 1e-12);
    assert!((field(&summary, "/det_summary/recall") - e.op_recall).abs() < 1e-12);
    assert!((field(&summary, "/image_summary/accuracy") - e.accuracy).abs() < 1e-12);
    assert!((field(&summary, "/image_summary/precision") - e.precision).abs() < 1e-12);
    assert!((field(&summary, "/image_summary/recall") - e.recall).abs() < 1e-12);
    assert_eq!(summary["failures"].as_array().unwrap().len(), 0);

    let per_image = json_of(&dir.path().join("out/per_image.json"));
    let entries = per_image.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    let img1 = &entries[0];
    assert_eq!(img1["image_id"], 1);
    let surviving = img1["surviving"].as_array().unwrap();
    assert_eq!(surviving.len(), 1);
    assert_eq!(surviving[0]["label"], e.survivor_label);
    assert_eq!(field(&surviving[0], "/score"), e.survivor_score);
    assert_eq!(field(&surviving[0], "/probability"), e.survivor_probability);
    assert_eq!(surviving[0]["bbox"][0], e.survivor_bbox.x);
    assert_eq!(surviving[0]["crop_box"][0], e.survivor_crop.x);

    // The report carries the published column names.
    let report = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    for column in ["Accuracy", "Precision", "Recall"] {
        assert!(report.contains(column), "report missing {column}");
    }
    assert_eq!(run.stdout, report);

    // One overlay per evaluated image, named by id and source stem.
    for name in ["1_img1.pgm", "2_img2.pgm", "3_img3.pgm"] {
        let overlay = dir.path().join("out/overlays").join(name);
        assert!(overlay.exists(), "missing overlay {name}");
        read_pgm(&std::fs::read(overlay).unwrap()).expect("overlay is a valid pgm");
    }
}

#[test]
fn run_without_overlay_flag_writes_no_overlays() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    let run = fracdet(&run_args(&[]), dir.path());
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    assert!(!dir.path().join("out/overlays").exists());
}

#[test]
fn run_rejects_out_of_range_conf_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    let run = fracdet(&run_args(&["--conf", "1.01"]), dir.path());
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);
    assert!(
        !dir.path().join("out").exists(),
        "no outputs may exist after a validation failure"
    );
}

#[test]
fn run_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    for out in ["out_a", "out_b"] {
        let mut args = run_args(&["--overlay"]);
        let pos = args.iter().position(|a| *a == "out").unwrap();
        args[pos] = out;
        let run = fracdet(&args, dir.path());
        assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    }
    for name in [
        "run_summary.json",
        "per_image.json",
        "report.txt",
        "overlays/1_img1.pgm",
        "overlays/2_img2.pgm",
        "overlays/3_img3.pgm",
    ] {
        let a = std::fs::read(dir.path().join("out_a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("out_b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn run_with_unreadable_image_exits_4_but_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = three_image_corpus();
    let paths = corpus.write_to(dir.path()).unwrap();
    let mut manifest = corpus.manifest.clone();
    manifest.push_str("missing.pgm,fracture\n");
    write(&paths.manifest, manifest);
    let run = fracdet(&run_args(&[]), dir.path());
    assert_eq!(run.code, 4, "stderr: {}", run.stderr);
    let summary = json_of(&dir.path().join("out/run_summary.json"));
    let failures = summary["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["stage"], "load");
    assert!(failures[0]["path"].as_str().unwrap().contains("missing.pgm"));
    // The three healthy images still evaluated.
    let per_image = json_of(&dir.path().join("out/per_image.json"));
    assert_eq!(per_image.as_array().unwrap().len(), 3);
}

#[test]
fn run_duplicate_corpus_ids_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = three_image_corpus();
    let paths = corpus.write_to(dir.path()).unwrap();
    let mut manifest = corpus.manifest.clone();
    manifest.push_str("img1.pgm,fracture,1\n");
    write(&paths.manifest, manifest);
    let run = fracdet(&run_args(&[]), dir.path());
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);
}

#[test]
fn run_missing_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    let mut args = run_args(&[]);
    let pos = args.iter().position(|a| *a == "corpus.csv").unwrap();
    args[pos] = "nope.csv";
    let run = fracdet(&args, dir.path());
    assert_eq!(run.code, 2);
}

#[test]
fn run_requires_exactly_one_backend_kind() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    // No detector at all.
    let run = fracdet(
        &[
            "run",
            "--manifest",
            "corpus.csv",
            "--crop-labels",
            "crop_labels.json",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);
    // Both detector kinds: rejected by flag parsing.
    let run = fracdet(
        &run_args(&["--detector-cmd", "cp {input} {output}"]),
        dir.path(),
    );
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);
}

#[test]
fn run_config_file_provides_everything_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    let config = r#"{
        "version": 1,
        "pipeline": {"conf_threshold": 0.95},
        "paths": {
            "manifest": "corpus.csv",
            "gt": "gt.json",
            "detections": "detections.json",
            "crop_labels": "crop_labels.json"
        }
    }"#;
    write(&dir.path().join("run.json"), config);

    // Config alone: the 0.95 gate removes every detection.
    let run = fracdet(
        &["run", "--config", "run.json", "--out", "strict"],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let per_image = json_of(&dir.path().join("strict/per_image.json"));
    let survivors: usize = per_image
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["surviving"].as_array().unwrap().len())
        .sum();
    assert_eq!(survivors, 0, "0.95 gate should remove all detections");

    // A flag overrides the config's gate and the survivor returns.
    let run = fracdet(
        &[
            "run",
            "--config",
            "run.json",
            "--conf",
            "0.3",
            "--out",
            "loose",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let per_image = json_of(&dir.path().join("loose/per_image.json"));
    let survivors: usize = per_image
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["surviving"].as_array().unwrap().len())
        .sum();
    assert_eq!(survivors, 1);
}

#[test]
fn run_config_rejects_unknown_fields_bad_versions_and_dead_paths() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    let cases = [
        ("unknown.json", r#"{"version": 1, "surprise": true}"#),
        ("version.json", r#"{"version": 2}"#),
        (
            "dead.json",
            r#"{"version": 1, "paths": {"manifest": "gone.csv"}}"#,
        ),
    ];
    for (name, doc) in cases {
        write(&dir.path().join(name), doc);
        let run = fracdet(
            &[
                "run",
                "--config",
                name,
                "--detections",
                "detections.json",
                "--crop-labels",
                "crop_labels.json",
                "--out",
                "out",
            ],
            dir.path(),
        );
        assert_eq!(run.code, 2, "config {name} should be rejected");
    }
}

#[test]
fn run_process_backends_match_file_backends() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();

    // Reference run with file backends.
    let run = fracdet(&run_args(&[]), dir.path());
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    // A detector command that answers every request with the full
    // detections document (extra image ids are fine for the detector
    // contract: unknown ids error, known ids are filtered per batch; here
    // all ids are known).
    let det_cmd = format!(
        "cp {} {{output}} && test -f {{input}}",
        dir.path().join("detections.json").display()
    );
    // A classifier command answering in request order from the stored
    // crop labels, keyed by image id (each image has at most one crop).
    let script = r#"
import json, sys
request = json.load(open(sys.argv[1]))
stored = json.load(open(sys.argv[2]))
by_image = {r["image_id"]: r for r in stored}
out = []
for crop in request["crops"]:
    r = by_image[crop["image_id"]]
    out.append({"label": r["label"], "probabilities": r["probabilities"]})
json.dump(out, open(sys.argv[3], "w"))
"#;
    write(&dir.path().join("classify.py"), script);
    let cls_cmd = format!(
        "python3 {} {{input}} {} {{output}}",
        dir.path().join("classify.py").display(),
        dir.path().join("crop_labels.json").display()
    );

    let run = fracdet(
        &[
            "run",
            "--manifest",
            "corpus.csv",
            "--gt",
            "gt.json",
            "--detector-cmd",
            &det_cmd,
            "--classifier-cmd",
            &cls_cmd,
            "--out",
            "proc",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    let file_summary = std::fs::read(dir.path().join("out/run_summary.json")).unwrap();
    let proc_summary = std::fs::read(dir.path().join("proc/run_summary.json")).unwrap();
    assert_eq!(file_summary, proc_summary);
    let file_per_image = std::fs::read(dir.path().join("out/per_image.json")).unwrap();
    let proc_per_image = std::fs::read(dir.path().join("proc/per_image.json")).unwrap();
    assert_eq!(file_per_image, proc_per_image);
    // The interchange scratch area stays inside the output directory.
    assert!(dir.path().join("proc/interchange").is_dir());
}

#[test]
fn run_failing_backend_command_exits_1_naming_stage() {
    let dir = tempfile::tempdir().unwrap();
    three_image_corpus().write_to(dir.path()).unwrap();
    let run = fracdet(
        &[
            "run",
            "--manifest",
            "corpus.csv",
            "--gt",
            "gt.json",
            "--detector-cmd",
            "test -f {input} && test -n {output} && false",
            "--crop-labels",
            "crop_labels.json",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 1, "stderr: {}", run.stderr);
    assert!(run.stderr.contains("detector"), "stderr: {}", run.stderr);
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

fn write_image(path: &Path, img: &GrayImage) {
    write(path, write_pgm(img));
}

fn read_image(path: &Path) -> GrayImage {
    read_pgm(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn kernels_flip_twice_restores_original_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(0xF11);
    let img = rand_gray(&mut rng, 33, 21);
    write_image(&dir.path().join("in.pgm"), &img);
    for (input, output) in [("in.pgm", "once.pgm"), ("once.pgm", "twice.pgm")] {
        let run = fracdet(
            &["kernels", "flip", "--input", input, "--output", output],
            dir.path(),
        );
        assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    }
    let original = std::fs::read(dir.path().join("in.pgm")).unwrap();
    let twice = std::fs::read(dir.path().join("twice.pgm")).unwrap();
    assert_eq!(original, twice);
}

#[test]
fn kernels_clahe_keeps_constant_images_constant() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::filled(40, 25, 128).unwrap();
    write_image(&dir.path().join("in.pgm"), &img);
    let run = fracdet(
        &["kernels", "clahe", "--input", "in.pgm", "--output", "out.pgm"],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let out = read_image(&dir.path().join("out.pgm"));
    let first = out.pixels()[0];
    assert!(out.pixels().iter().all(|&p| p == first));
}

#[test]
fn kernels_clahe_single_tile_equals_global_equalization() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(0xC1A);
    let img = rand_gray(&mut rng, 37, 29);
    write_image(&dir.path().join("in.pgm"), &img);
    let run = fracdet(
        &[
            "kernels",
            "clahe",
            "--input",
            "in.pgm",
            "--output",
            "out.pgm",
            "--tiles-x",
            "1",
            "--tiles-y",
            "1",
            "--clip-limit",
            "256.0",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let out = read_image(&dir.path().join("out.pgm"));
    assert_eq!(out.pixels(), ref_global_hist_eq(&img).pixels());
}

#[test]
fn kernels_rotate_four_quarter_turns_restore_original() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(0x90);
    let img = rand_gray(&mut rng, 24, 18);
    write_image(&dir.path().join("r0.pgm"), &img);
    for k in 0..4 {
        let run = fracdet(
            &[
                "kernels",
                "rotate",
                "--input",
                &format!("r{k}.pgm"),
                "--output",
                &format!("r{}.pgm", k + 1),
                "--angle",
                "90",
            ],
            dir.path(),
        );
        assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    }
    let original = std::fs::read(dir.path().join("r0.pgm")).unwrap();
    let full_turn = std::fs::read(dir.path().join("r4.pgm")).unwrap();
    assert_eq!(original, full_turn);
}

#[test]
fn kernels_rotate_rejects_unsupported_angle() {
    let dir = tempfile::tempdir().unwrap();
    write_image(
        &dir.path().join("in.pgm"),
        &GrayImage::filled(10, 10, 7).unwrap(),
    );
    let run = fracdet(
        &[
            "kernels", "rotate", "--input", "in.pgm", "--output", "out.pgm", "--angle", "45",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);
    assert!(!dir.path().join("out.pgm").exists());
}

#[test]
fn kernels_png_roundtrip_preserves_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(0x9E6);
    let img = rand_gray(&mut rng, 19, 27);
    write_image(&dir.path().join("in.pgm"), &img);
    // pgm -> png -> pgm through two flips restores the original pixels.
    for (input, output) in [("in.pgm", "mid.png"), ("mid.png", "back.pgm")] {
        let run = fracdet(
            &["kernels", "flip", "--input", input, "--output", output],
            dir.path(),
        );
        assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    }
    let back = read_image(&dir.path().join("back.pgm"));
    assert_eq!(back.pixels(), img.pixels());
}

#[test]
fn kernels_supcon_prints_oracle_value_to_nine_digits() {
    let dir = tempfile::tempdir().unwrap();
    // Six unit vectors in four dimensions, three label pairs.
    let raw: [[f64; 4]; 6] = [
        [1.0, 2.0, 0.5, -1.0],
        [0.9, 2.1, 0.4, -1.2],
        [-1.0, 0.3, 2.0, 0.7],
        [-0.8, 0.1, 2.2, 0.9],
        [0.2, -1.5, 0.3, 1.8],
        [0.1, -1.4, 0.5, 1.9],
    ];
    let labels = vec![0i64, 0, 1, 1, 2, 2];
    let mut vectors = Vec::new();
    let mut flat = Vec::new();
    for row in raw {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = row.iter().map(|v| v / norm).collect();
        flat.extend_from_slice(&unit);
        vectors.push(unit);
    }
    let doc = serde_json::json!({"dim": 4, "vectors": vectors, "labels": labels});
    write(&dir.path().join("batch.json"), doc.to_string());

    let run = fracdet(
        &[
            "kernels", "loss", "supcon", "--batch", "batch.json", "--tau", "0.1",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let printed: f64 = run.stdout.trim().parse().expect("stdout is a number");
    let batch = EmbeddingBatch::new(4, flat, labels).unwrap();
    let expected = ref_supcon(&batch, 0.1).expect("positives exist");
    assert!(
        (printed - expected).abs() < 1e-8,
        "printed {printed} vs oracle {expected}"
    );
    // 9 significant digits: d.dddddddde±e.
    let mantissa = run.stdout.trim().split('e').next().unwrap();
    assert_eq!(mantissa.replace(['-', '.'], "").len(), 9, "{}", run.stdout);
}

#[test]
fn kernels_ce_is_stable_at_extreme_logits() {
    let dir = tempfile::tempdir().unwrap();
    let run = fracdet(
        &[
            "kernels",
            "loss",
            "ce",
            "--logits",
            "1000,0",
            "--true-class",
            "0",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    assert_eq!(run.stdout.trim(), "0.00000000e0");
    let run = fracdet(
        &[
            "kernels",
            "loss",
            "ce",
            "--logits",
            "1000,0",
            "--true-class",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    assert_eq!(run.stdout.trim(), "1.00000000e3");
}

#[test]
fn kernels_giou_and_l1_match_module_values() {
    let dir = tempfile::tempdir().unwrap();
    let run = fracdet(
        &[
            "kernels",
            "loss",
            "giou",
            "--pred",
            "0,0,10,10",
            "--gt",
            "5,5,10,10",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0);
    let printed: f64 = run.stdout.trim().parse().unwrap();
    // iou 1/7; hull 225 with union 175, so giou = 1/7 - 50/225.
    let expected = 1.0 - (1.0 / 7.0 - 50.0 / 225.0);
    assert!((printed - expected).abs() < 1e-8);

    let run = fracdet(
        &[
            "kernels",
            "loss",
            "l1",
            "--pred",
            "0,0,10,10",
            "--gt",
            "5,5,10,10",
            "--width",
            "100",
            "--height",
            "50",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0);
    let printed: f64 = run.stdout.trim().parse().unwrap();
    assert!((printed - 0.15).abs() < 1e-12);
}

#[test]
fn kernels_malformed_box_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let run = fracdet(
        &[
            "kernels", "loss", "giou", "--pred", "1,2,3", "--gt", "0,0,1,1",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 2);
}

// ---------------------------------------------------------------------------
// output containment
// ---------------------------------------------------------------------------

#[test]
fn run_writes_only_inside_its_out_directory() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("inputs");
    std::fs::create_dir(&inputs).unwrap();
    three_image_corpus().write_to(&inputs).unwrap();
    let before: Vec<PathBuf> = list_files(&inputs);
    let run = fracdet(
        &[
            "run",
            "--manifest",
            "inputs/corpus.csv",
            "--gt",
            "inputs/gt.json",
            "--detections",
            "inputs/detections.json",
            "--crop-labels",
            "inputs/crop_labels.json",
            "--out",
            "out",
            "--overlay",
        ],
        dir.path(),
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let after: Vec<PathBuf> = list_files(&inputs);
    assert_eq!(before, after, "input directory must stay untouched");
    let top: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let mut top_sorted = top.clone();
    top_sorted.sort();
    assert_eq!(top_sorted, ["inputs", "out"], "no stray top-level writes");
}

fn list_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
}
