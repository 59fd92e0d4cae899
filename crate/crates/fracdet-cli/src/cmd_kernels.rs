//! `fracdet kernels`: direct access to the preprocessing and loss
//! kernels for external validation. Image kernels read and write `.pgm`
//! or `.png`; loss kernels print one value with 9 significant digits.

use std::path::PathBuf;

use anyhow::anyhow;
use clap::{Args, Subcommand};
use fracdet_core::imgproc::{clahe, hflip, rotate, ClaheParams};
use fracdet_core::loss::{
    cross_entropy, giou_loss, l1_bbox_loss, supcon_loss, EmbeddingBatch, Temperature,
};
use fracdet_core::{BBox, GrayImage, ImageBounds};
use serde::Deserialize;

use crate::failure::{read_input, CmdResult, Failure};
use crate::images::{load_gray, save_gray};

#[derive(Debug, Subcommand)]
pub enum KernelsCmd {
    /// Contrast-limited adaptive histogram equalization
    Clahe(ClaheArgs),
    /// Horizontal mirror
    Flip(FlipArgs),
    /// Rotation by 90/180/270 or a small angle within [-15, 15] degrees
    Rotate(RotateArgs),
    /// Loss kernels; each prints one scalar
    #[command(subcommand)]
    Loss(LossCmd),
}

#[derive(Debug, Args)]
pub struct ClaheArgs {
    /// Input image (.pgm or .png)
    #[arg(long)]
    pub input: PathBuf,
    /// Output image (.pgm or .png)
    #[arg(long)]
    pub output: PathBuf,
    /// Tile grid columns
    #[arg(long, default_value_t = 8)]
    pub tiles_x: u32,
    /// Tile grid rows
    #[arg(long, default_value_t = 8)]
    pub tiles_y: u32,
    /// Histogram clip level as a multiple of the uniform bin height
    #[arg(long, default_value_t = 2.0)]
    pub clip_limit: f64,
}

#[derive(Debug, Args)]
pub struct FlipArgs {
    /// Input image (.pgm or .png)
    #[arg(long)]
    pub input: PathBuf,
    /// Output image (.pgm or .png)
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RotateArgs {
    /// Input image (.pgm or .png)
    #[arg(long)]
    pub input: PathBuf,
    /// Output image (.pgm or .png)
    #[arg(long)]
    pub output: PathBuf,
    /// Clockwise angle in degrees: 90, 180, 270, or within [-15, 15]
    #[arg(long)]
    pub angle: f64,
}

#[derive(Debug, Subcommand)]
pub enum LossCmd {
    /// Supervised contrastive loss over an embedding batch document
    Supcon(SupconArgs),
    /// Generalized-IoU loss between two boxes
    Giou(BoxPairArgs),
    /// L1 box regression loss, normalized by the image size
    L1(L1Args),
    /// Cross-entropy of a logit vector against the true class
    Ce(CeArgs),
}

#[derive(Debug, Args)]
pub struct SupconArgs {
    /// Batch document: {"dim": D, "vectors": [[..D floats..], ..], "labels": [..]}
    #[arg(long)]
    pub batch: PathBuf,
    /// Softmax temperature
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct BoxPairArgs {
    /// Predicted box as x,y,w,h
    #[arg(long)]
    pub pred: String,
    /// Ground-truth box as x,y,w,h
    #[arg(long)]
    pub gt: String,
}

#[derive(Debug, Args)]
pub struct L1Args {
    /// Predicted box as x,y,w,h
    #[arg(long)]
    pub pred: String,
    /// Ground-truth box as x,y,w,h
    #[arg(long)]
    pub gt: String,
    /// Normalizing image width
    #[arg(long)]
    pub width: u32,
    /// Normalizing image height
    #[arg(long)]
    pub height: u32,
}

#[derive(Debug, Args)]
pub struct CeArgs {
    /// Comma-separated logit values
    #[arg(long)]
    pub logits: String,
    /// Index of the true class
    #[arg(long)]
    pub true_class: usize,
}

fn parse_box(what: &str, text: &str) -> CmdResult<BBox> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Failure::input(anyhow!(
            "--{what} must be x,y,w,h, got {text:?}"
        )));
    }
    let mut vals = [0.0f64; 4];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| Failure::input(anyhow!("--{what}: bad number {part:?}")))?;
    }
    Ok(BBox::new(vals[0], vals[1], vals[2], vals[3]))
}

fn parse_floats(what: &str, text: &str) -> CmdResult<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .map(|part| {
            part.parse()
                .map_err(|_| Failure::input(anyhow!("--{what}: bad number {part:?}")))
        })
        .collect()
}

fn load_input_image(path: &PathBuf) -> CmdResult<GrayImage> {
    load_gray(path).map_err(Failure::input)
}

/// Prints a loss value with 9 significant digits.
fn print_value(v: f64) {
    println!("{v:.8e}");
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SupconBatchDoc {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    labels: Vec<i64>,
}

pub fn run(cmd: KernelsCmd) -> CmdResult {
    match cmd {
        KernelsCmd::Clahe(args) => {
            let img = load_input_image(&args.input)?;
            let params = ClaheParams {
                tiles_x: args.tiles_x,
                tiles_y: args.tiles_y,
                clip_limit: args.clip_limit,
            };
            let out = clahe(&img, &params).map_err(Failure::input)?;
            save_gray(&args.output, &out)?;
            Ok(())
        }
        KernelsCmd::Flip(args) => {
            let img = load_input_image(&args.input)?;
            let (out, _) = hflip(&img, &[]);
            save_gray(&args.output, &out)?;
            Ok(())
        }
        KernelsCmd::Rotate(args) => {
            let img = load_input_image(&args.input)?;
            let (out, _) = rotate(&img, &[], args.angle).map_err(Failure::input)?;
            save_gray(&args.output, &out)?;
            Ok(())
        }
        KernelsCmd::Loss(loss) => run_loss(loss),
    }
}

fn run_loss(cmd: LossCmd) -> CmdResult {
    match cmd {
        LossCmd::Supcon(args) => {
            let doc: SupconBatchDoc = serde_json::from_str(&read_input(&args.batch)?)
                .map_err(|e| Failure::input(anyhow!("batch {}: {e}", args.batch.display())))?;
            let mut flat = Vec::with_capacity(doc.vectors.len() * doc.dim);
            for (i, v) in doc.vectors.iter().enumerate() {
                if v.len() != doc.dim {
                    return Err(Failure::input(anyhow!(
                        "batch {}: vector {i} has {} entries, expected {}",
                        args.batch.display(),
                        v.len(),
                        doc.dim
                    )));
                }
                flat.extend_from_slice(v);
            }
            let batch = EmbeddingBatch::new(doc.dim, flat, doc.labels).map_err(Failure::input)?;
            let tau = Temperature::new(args.tau).map_err(Failure::input)?;
            let v = supcon_loss(&batch, tau).map_err(Failure::input)?;
            print_value(v);
            Ok(())
        }
        LossCmd::Giou(args) => {
            let pred = parse_box("pred", &args.pred)?;
            let gt = parse_box("gt", &args.gt)?;
            let v = giou_loss(&pred, &gt).map_err(Failure::input)?;
            print_value(v);
            Ok(())
        }
        LossCmd::L1(args) => {
            let pred = parse_box("pred", &args.pred)?;
            let gt = parse_box("gt", &args.gt)?;
            let bounds = ImageBounds::new(args.width, args.height).map_err(Failure::input)?;
            print_value(l1_bbox_loss(&pred, &gt, bounds));
            Ok(())
        }
        LossCmd::Ce(args) => {
            let logits = parse_floats("logits", &args.logits)?;
            let v = cross_entropy(&logits, args.true_class).map_err(Failure::input)?;
            print_value(v);
            Ok(())
        }
    }
}
