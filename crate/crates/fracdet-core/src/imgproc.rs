//! Grayscale image kernels: CLAHE, flips and rotations with box
//! transforms, crop extraction, overlay rasterization, and binary PGM
//! (P5) I/O.
//!
//! Images are 8-bit single-channel, row-major. All kernels are pure
//! functions over immutable inputs and byte-deterministic.

use thiserror::Error;

use crate::geometry::{BBox, ImageBounds};

#[derive(Debug, Error, PartialEq)]
pub enum ImgError {
    #[error("pixel buffer length {got} does not match {width}x{height}")]
    BadBufferLength { width: u32, height: u32, got: usize },
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("tile grid {tiles_x}x{tiles_y} exceeds image size {width}x{height}")]
    TilesExceedImage {
        tiles_x: u32,
        tiles_y: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid CLAHE parameters: {0}")]
    BadClaheParams(&'static str),
    #[error("unsupported rotation angle {0} (use 90/180/270 or [-15, 15])")]
    UnsupportedAngle(f64),
    #[error("crop box is empty after integer rounding")]
    EmptyCrop,
    #[error("crop box ({x}, {y}, {w}, {h}) exceeds image {width}x{height}")]
    CropOutOfBounds {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        width: u32,
        height: u32,
    },
    #[error("malformed PGM: {0}")]
    PgmParse(String),
}

/// 8-bit grayscale image; length of `pixels` always equals
/// `width × height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImgError> {
        if width == 0 || height == 0 {
            return Err(ImgError::EmptyImage { width, height });
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(ImgError::BadBufferLength {
                width,
                height,
                got: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImgError> {
        Self::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    pub fn from_fn<F: FnMut(u32, u32) -> u8>(
        width: u32,
        height: u32,
        mut f: F,
    ) -> Result<Self, ImgError> {
        let mut pixels = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn bounds(&self) -> ImageBounds {
        ImageBounds {
            width: self.width,
            height: self.height,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y as usize) * (self.width as usize) + (x as usize)]
    }

    fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[(y as usize) * (self.width as usize) + (x as usize)] = value;
    }
}

// ---------------------------------------------------------------------------
// PGM (P5) I/O
// ---------------------------------------------------------------------------

/// Encodes as binary PGM: `P5\n<w> <h>\n255\n` followed by raw bytes.
/// Byte-exact round trip with [`read_pgm`].
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Decodes binary PGM with standard whitespace and `#`-comment handling;
/// only 8-bit (maxval ≤ 255) images are supported.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, ImgError> {
    let err = |m: &str| ImgError::PgmParse(m.to_string());
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String, ImgError> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(ImgError::PgmParse("unexpected end of header".to_string()));
        }
        String::from_utf8(bytes[start..*pos].to_vec())
            .map_err(|_| ImgError::PgmParse("non-ASCII header token".to_string()))
    };

    if token(&mut pos)? != "P5" {
        return Err(err("not a binary PGM (missing P5 magic)"));
    }
    let width: u32 = token(&mut pos)?.parse().map_err(|_| err("bad width"))?;
    let height: u32 = token(&mut pos)?.parse().map_err(|_| err("bad height"))?;
    let maxval: u32 = token(&mut pos)?.parse().map_err(|_| err("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM (maxval 1..=255) is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing raster separator"));
    }
    pos += 1;
    let n = (width as usize) * (height as usize);
    if bytes.len() - pos < n {
        return Err(err("raster data truncated"));
    }
    GrayImage::new(width, height, bytes[pos..pos + n].to_vec())
}

// ---------------------------------------------------------------------------
// CLAHE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Histogram clip level as a multiple of the uniform bin height
    /// (tile pixels / 256); 1.0 is the minimum, larger values clip less.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 2.0,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<(), ImgError> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(ImgError::BadClaheParams("tile counts must be at least 1"));
        }
        if !(self.clip_limit.is_finite() && self.clip_limit >= 1.0) {
            return Err(ImgError::BadClaheParams("clip limit must be at least 1.0"));
        }
        Ok(())
    }
}

/// Contrast-limited adaptive histogram equalization.
///
/// The image is covered by a `tiles_x × tiles_y` grid of equal tiles
/// (`ceil` division; edge tiles sample border-replicated pixels so every
/// tile holds the same pixel count). Each tile's 256-bin histogram is
/// clipped at `clip_limit × tile_pixels / 256` (floor, at least 1), the
/// excess redistributed uniformly in a single pass with the remainder
/// given to the lowest bins, and the mapping `v → round(255 · cdf(v) /
/// tile_pixels)` built from the clipped histogram. Output pixels
/// bilinearly interpolate the mappings of the surrounding tile centers.
///
/// A constant image therefore stays constant, and with one tile and a
/// non-clipping limit (256.0) the result is exactly plain global
/// histogram equalization.
pub fn clahe(img: &GrayImage, p: &ClaheParams) -> Result<GrayImage, ImgError> {
    p.validate()?;
    let (w, h) = (img.width, img.height);
    if p.tiles_x > w || p.tiles_y > h {
        return Err(ImgError::TilesExceedImage {
            tiles_x: p.tiles_x,
            tiles_y: p.tiles_y,
            width: w,
            height: h,
        });
    }
    let (tx, ty) = (p.tiles_x as usize, p.tiles_y as usize);
    let tw = (w as usize).div_ceil(tx);
    let th = (h as usize).div_ceil(ty);
    let tile_pixels = (tw * th) as u64;
    let clip = ((p.clip_limit * tile_pixels as f64 / 256.0).floor() as u64).max(1);

    let mut luts: Vec<[u8; 256]> = Vec::with_capacity(tx * ty);
    for tj in 0..ty {
        for ti in 0..tx {
            let mut hist = [0u64; 256];
            for yy in 0..th {
                let sy = ((tj * th + yy).min(h as usize - 1)) as u32;
                for xx in 0..tw {
                    let sx = ((ti * tw + xx).min(w as usize - 1)) as u32;
                    hist[img.get(sx, sy) as usize] += 1;
                }
            }
            let mut excess = 0u64;
            for bin in hist.iter_mut() {
                if *bin > clip {
                    excess += *bin - clip;
                    *bin = clip;
                }
            }
            let per_bin = excess / 256;
            let remainder = (excess % 256) as usize;
            for (i, bin) in hist.iter_mut().enumerate() {
                *bin += per_bin + u64::from(i < remainder);
            }
            let mut lut = [0u8; 256];
            let mut cum = 0u64;
            for (v, bin) in hist.iter().enumerate() {
                cum += *bin;
                lut[v] = ((255.0 * cum as f64) / tile_pixels as f64).round() as u8;
            }
            luts.push(lut);
        }
    }

    // Interpolation coordinates relative to tile centers.
    let center0_x = (tw as f64 - 1.0) / 2.0;
    let center0_y = (th as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    for y in 0..h {
        let tyf = (y as f64 - center0_y) / th as f64;
        let (j0, j1, fy) = interp_index(tyf, ty);
        for x in 0..w {
            let txf = (x as f64 - center0_x) / tw as f64;
            let (i0, i1, fx) = interp_index(txf, tx);
            let v = img.get(x, y) as usize;
            let top = (1.0 - fx) * f64::from(luts[j0 * tx + i0][v])
                + fx * f64::from(luts[j0 * tx + i1][v]);
            let bottom = (1.0 - fx) * f64::from(luts[j1 * tx + i0][v])
                + fx * f64::from(luts[j1 * tx + i1][v]);
            let blended = (1.0 - fy) * top + fy * bottom;
            out.set(x, y, blended.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Maps a center-relative coordinate to (lower tile, upper tile, weight),
/// clamping outside the first/last tile centers.
fn interp_index(t: f64, tiles: usize) -> (usize, usize, f64) {
    let i0 = t.floor();
    if i0 < 0.0 {
        (0, 0, 0.0)
    } else if i0 as usize >= tiles - 1 {
        (tiles - 1, tiles - 1, 0.0)
    } else {
        let i = i0 as usize;
        (i, i + 1, t - i0)
    }
}

// ---------------------------------------------------------------------------
// Flip / rotate / crop
// ---------------------------------------------------------------------------

/// Mirrors about the vertical axis; each box maps to
/// `(width − x − w, y, w, h)`.
pub fn hflip(img: &GrayImage, boxes: &[BBox]) -> (GrayImage, Vec<BBox>) {
    let (w, h) = (img.width, img.height);
    let flipped = GrayImage::from_fn(w, h, |x, y| img.get(w - 1 - x, y)).expect("same dims");
    let boxes = boxes
        .iter()
        .map(|b| BBox::new(w as f64 - b.x - b.w, b.y, b.w, b.h))
        .collect();
    (flipped, boxes)
}

/// Rotates image and boxes together. Angles 90/180/270 are exact pixel
/// permutations (degrees clockwise); other angles within [-15, 15] use
/// nearest-neighbor resampling about the image center with zero padding,
/// and each box becomes the axis-aligned hull of its rotated corners,
/// clamped to bounds.
pub fn rotate(
    img: &GrayImage,
    boxes: &[BBox],
    angle_deg: f64,
) -> Result<(GrayImage, Vec<BBox>), ImgError> {
    let (w, h) = (img.width, img.height);
    let (wf, hf) = (w as f64, h as f64);
    match angle_deg {
        a if a == 90.0 => {
            let out = GrayImage::from_fn(h, w, |x, y| img.get(y, h - 1 - x)).expect("dims");
            let boxes = boxes
                .iter()
                .map(|b| BBox::new(hf - b.y - b.h, b.x, b.h, b.w))
                .collect();
            Ok((out, boxes))
        }
        a if a == 180.0 => {
            let out = GrayImage::from_fn(w, h, |x, y| img.get(w - 1 - x, h - 1 - y)).expect("dims");
            let boxes = boxes
                .iter()
                .map(|b| BBox::new(wf - b.x - b.w, hf - b.y - b.h, b.w, b.h))
                .collect();
            Ok((out, boxes))
        }
        a if a == 270.0 => {
            let out = GrayImage::from_fn(h, w, |x, y| img.get(w - 1 - y, x)).expect("dims");
            let boxes = boxes
                .iter()
                .map(|b| BBox::new(b.y, wf - b.x - b.w, b.h, b.w))
                .collect();
            Ok((out, boxes))
        }
        a if (-15.0..=15.0).contains(&a) => Ok(rotate_small(img, boxes, a)),
        a => Err(ImgError::UnsupportedAngle(a)),
    }
}

fn rotate_small(img: &GrayImage, boxes: &[BBox], angle_deg: f64) -> (GrayImage, Vec<BBox>) {
    let (w, h) = (img.width, img.height);
    let rad = angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    // Inverse mapping: sample the source at the un-rotated coordinate;
    // out-of-bounds samples are zero padding.
    let out = GrayImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = (cx + cos * dx + sin * dy).round();
        let sy = (cy - sin * dx + cos * dy).round();
        if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
            img.get(sx as u32, sy as u32)
        } else {
            0
        }
    })
    .expect("dims");
    let bounds = img.bounds();
    let boxes = boxes
        .iter()
        .map(|b| {
            let (x1, y1, x2, y2) = b.to_corners();
            let corners = [(x1, y1), (x2, y1), (x1, y2), (x2, y2)];
            let mut min_x = f64::INFINITY;
            let mut min_y = f64::INFINITY;
            let mut max_x = f64::NEG_INFINITY;
            let mut max_y = f64::NEG_INFINITY;
            for (px, py) in corners {
                let dx = px - cx;
                let dy = py - cy;
                let rx = cx + cos * dx - sin * dy;
                let ry = cy + sin * dx + cos * dy;
                min_x = min_x.min(rx);
                min_y = min_y.min(ry);
                max_x = max_x.max(rx);
                max_y = max_y.max(ry);
            }
            let hull = BBox::from_corners(min_x, min_y, max_x, max_y).expect("ordered");
            crate::geometry::expand_with_margin(&hull, 0.0, bounds)
        })
        .collect();
    (out, boxes)
}

/// Copies the sub-rectangle covered by `b` after rounding each field to
/// the nearest integer. Errors when the rounded box is empty or falls
/// outside the image.
pub fn crop(img: &GrayImage, b: &BBox) -> Result<GrayImage, ImgError> {
    let x = b.x.round() as i64;
    let y = b.y.round() as i64;
    let cw = b.w.round() as i64;
    let ch = b.h.round() as i64;
    if cw <= 0 || ch <= 0 {
        return Err(ImgError::EmptyCrop);
    }
    if x < 0 || y < 0 || x + cw > i64::from(img.width) || y + ch > i64::from(img.height) {
        return Err(ImgError::CropOutOfBounds {
            x,
            y,
            w: cw,
            h: ch,
            width: img.width,
            height: img.height,
        });
    }
    GrayImage::from_fn(cw as u32, ch as u32, |xx, yy| {
        img.get(x as u32 + xx, y as u32 + yy)
    })
}

// ---------------------------------------------------------------------------
// Overlay rendering
// ---------------------------------------------------------------------------

/// A box to burn into an overlay, with an optional text tag.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayItem {
    pub bbox: BBox,
    /// Rendered above the box when non-empty (uppercased 5×7 bitmap font).
    pub label: String,
    /// Appended to the label with two decimals when present.
    pub score: Option<f64>,
}

/// Burns 2-px maximum-intensity outlines (plus optional text tags) into a
/// copy of the image. Byte-deterministic; with no items the input is
/// returned unchanged, and an item with an empty label and no score
/// changes outline pixels only.
pub fn render_overlay(img: &GrayImage, items: &[OverlayItem]) -> GrayImage {
    let mut out = img.clone();
    for item in items {
        let (x0, y0, x1, y1) = outline_rect(&item.bbox, img.width, img.height);
        for t in 0..2i64 {
            draw_h_line(&mut out, x0, x1, y0 + t);
            draw_h_line(&mut out, x0, x1, y1 - t);
            draw_v_line(&mut out, y0, y1, x0 + t);
            draw_v_line(&mut out, y0, y1, x1 - t);
        }
        let text = match (&item.label, item.score) {
            (l, Some(s)) if l.is_empty() => format!("{s:.2}"),
            (l, Some(s)) => format!("{l} {s:.2}"),
            (l, None) => l.clone(),
        };
        if !text.is_empty() {
            let ty = if y0 >= 9 { y0 - 9 } else { y0 + 3 };
            draw_text(&mut out, &text, x0 + 1, ty);
        }
    }
    out
}

fn outline_rect(b: &BBox, w: u32, h: u32) -> (i64, i64, i64, i64) {
    let x0 = (b.x.round() as i64).clamp(0, i64::from(w) - 1);
    let y0 = (b.y.round() as i64).clamp(0, i64::from(h) - 1);
    let x1 = ((b.x + b.w).round() as i64 - 1).clamp(x0, i64::from(w) - 1);
    let y1 = ((b.y + b.h).round() as i64 - 1).clamp(y0, i64::from(h) - 1);
    (x0, y0, x1, y1)
}

fn draw_h_line(img: &mut GrayImage, x0: i64, x1: i64, y: i64) {
    if y < 0 || y >= i64::from(img.height) {
        return;
    }
    for x in x0.max(0)..=x1.min(i64::from(img.width) - 1) {
        img.set(x as u32, y as u32, 255);
    }
}

fn draw_v_line(img: &mut GrayImage, y0: i64, y1: i64, x: i64) {
    if x < 0 || x >= i64::from(img.width) {
        return;
    }
    for y in y0.max(0)..=y1.min(i64::from(img.height) - 1) {
        img.set(x as u32, y as u32, 255);
    }
}

fn draw_text(img: &mut GrayImage, text: &str, x: i64, y: i64) {
    let mut cx = x;
    for ch in text.to_ascii_uppercase().chars() {
        let glyph = glyph_rows(ch);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..5i64 {
                if bits & (0b10000 >> col) != 0 {
                    let px = cx + col;
                    let py = y + row as i64;
                    if px >= 0
                        && py >= 0
                        && px < i64::from(img.width)
                        && py < i64::from(img.height)
                    {
                        img.set(px as u32, py as u32, 255);
                    }
                }
            }
        }
        cx += 6;
    }
}

/// 5×7 bitmap font rows (top to bottom, bit 4 = leftmost column).
/// Unknown characters render as blanks.
fn glyph_rows(ch: char) -> [u8; 7] {
    match ch {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100],
        '-' => [0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000],
        ':' => [0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000],
        '%' => [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011],
        _ => [0; 7],
    }
}
