//! Grayscale image I/O for the CLI: 8-bit PGM via the core codec and
//! 8-bit grayscale PNG via the `png` crate, dispatched on the file
//! extension.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fracdet_core::imgproc::{read_pgm, write_pgm};
use fracdet_core::pipeline::{ImageRef, ImageSource, PipelineError};
use fracdet_core::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Pgm,
    Png,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => Ok(Format::Pgm),
        Some("png") => Ok(Format::Png),
        _ => bail!(
            "unsupported image extension for {} (expected .pgm or .png)",
            path.display()
        ),
    }
}

/// Loads an 8-bit grayscale image from a `.pgm` or `.png` file.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    match format_of(path)? {
        Format::Pgm => {
            let bytes =
                std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            read_pgm(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))
        }
        Format::Png => load_png(path),
    }
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        bail!(
            "{}: png must be 8-bit grayscale, got {:?} at {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        );
    }
    buf.truncate(info.buffer_size());
    GrayImage::new(info.width, info.height, buf).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Writes an 8-bit grayscale image as `.pgm` or `.png`, by extension.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    match format_of(path)? {
        Format::Pgm => std::fs::write(path, write_pgm(img))
            .with_context(|| format!("cannot write {}", path.display())),
        Format::Png => save_png(path, img),
    }
}

fn save_png(path: &Path, img: &GrayImage) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width(), img.height());
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    writer
        .write_image_data(img.pixels())
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Filesystem image source for the pipeline: resolves relative manifest
/// paths against a root directory (absolute paths pass through) and
/// loads `.pgm` or `.png` pixels.
pub struct FsSource {
    root: PathBuf,
}

impl FsSource {
    pub fn new<P: Into<PathBuf>>(root: P) -> Self {
        FsSource { root: root.into() }
    }
}

impl ImageSource for FsSource {
    fn load(&self, image: &ImageRef) -> Result<GrayImage, PipelineError> {
        let rel = Path::new(&image.path);
        let full = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        };
        load_gray(&full).map_err(|e| PipelineError::ImageLoad {
            path: full.display().to_string(),
            message: format!("{e:#}"),
        })
    }
}
