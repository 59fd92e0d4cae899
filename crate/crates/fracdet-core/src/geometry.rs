//! Box representations, overlap measures, margin expansion, and
//! non-maximum suppression.
//!
//! Boxes are stored in COCO `xywh` convention with continuous (floating)
//! pixel coordinates; corner form exists only at API edges. All operations
//! are pure and state-free.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// GIoU is undefined when both boxes have zero area.
    #[error("generalized IoU is undefined for two zero-area boxes")]
    DegenerateBoxes,
    #[error("inverted corners: ({x1}, {y1}) to ({x2}, {y2})")]
    InvertedCorners { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid box (x={x}, y={y}, w={w}, h={h}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },
    #[error("image bounds must be strictly positive, got {width}x{height}")]
    EmptyBounds { width: u32, height: u32 },
}

/// Axis-aligned rectangle in pixel coordinates: `(x, y)` is the top-left
/// corner, `w`/`h` extend right and down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Checks the storage invariants: finite fields, non-negative extent.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [self.x, self.y, self.w, self.h];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                reason: "non-finite field",
            });
        }
        if self.w < 0.0 || self.h < 0.0 {
            return Err(GeometryError::InvalidBox {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                reason: "negative extent",
            });
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner form `(x1, y1, x2, y2)` with `x2 = x + w`, `y2 = y + h`.
    pub fn to_corners(&self) -> (f64, f64, f64, f64) {
        (self.x, self.y, self.x + self.w, self.y + self.h)
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if x2 < x1 || y2 < y1 {
            return Err(GeometryError::InvertedCorners { x1, y1, x2, y2 });
        }
        Ok(BBox::new(x1, y1, x2 - x1, y2 - y1))
    }

    /// Center-form coordinates `(cx, cy, w, h)`.
    pub fn center_form(&self) -> (f64, f64, f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0, self.w, self.h)
    }

    /// True when this box lies entirely inside `other` (shared edges count
    /// as inside).
    pub fn contained_in(&self, other: &BBox) -> bool {
        let (ax1, ay1, ax2, ay2) = self.to_corners();
        let (bx1, by1, bx2, by2) = other.to_corners();
        ax1 >= bx1 && ay1 >= by1 && ax2 <= bx2 && ay2 <= by2
    }

    /// Rounds each field to two decimals; used as a stable lookup identity
    /// for fixture classifier backends.
    pub fn rounded_2dp(&self) -> BBox {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        BBox::new(r(self.x), r(self.y), r(self.w), r(self.h))
    }
}

/// Boxes serialize as the COCO 4-element array `[x, y, w, h]` everywhere.
impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <Vec<f64>>::deserialize(deserializer)?;
        if v.len() != 4 {
            return Err(D::Error::custom(format!(
                "bbox must have exactly 4 elements, got {}",
                v.len()
            )));
        }
        Ok(BBox::new(v[0], v[1], v[2], v[3]))
    }
}

/// A scored, categorized box emitted by a detector backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub category_id: i64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, category_id: i64) -> Self {
        Detection {
            bbox,
            score,
            category_id,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.bbox.validate()?;
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidBox {
                x: self.bbox.x,
                y: self.bbox.y,
                w: self.bbox.w,
                h: self.bbox.h,
                reason: "score outside [0, 1]",
            });
        }
        Ok(())
    }
}

/// Integer pixel dimensions of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageBounds {
    pub width: u32,
    pub height: u32,
}

impl ImageBounds {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyBounds { width, height });
        }
        Ok(ImageBounds { width, height })
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.to_corners();
    let (bx1, by1, bx2, by2) = b.to_corners();
    let w = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let h = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    w * h
}

/// Intersection-over-union of two boxes. Two zero-area boxes (union zero)
/// yield 0 rather than an error.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the hull-slack penalty
/// `(area(hull) - area(union)) / area(hull)`, in `[-1, 1]`.
///
/// Errors when both boxes have zero area (the hull penalty is undefined).
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    if a.area() <= 0.0 && b.area() <= 0.0 {
        return Err(GeometryError::DegenerateBoxes);
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let (ax1, ay1, ax2, ay2) = a.to_corners();
    let (bx1, by1, bx2, by2) = b.to_corners();
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    let iou_val = if union <= 0.0 { 0.0 } else { inter / union };
    Ok(iou_val - (hull - union) / hull)
}

/// Greedy non-maximum suppression.
///
/// Detections are visited in descending score order (ties broken by input
/// index, lower first); one is kept iff its IoU with every already-kept
/// detection is strictly below `iou_threshold`. Suppression is
/// class-agnostic. The output is in descending score order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept
            .iter()
            .all(|&k| iou(&dets[i].bbox, &dets[k].bbox) < iou_threshold)
        {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Expands each side of a box outward by `margin` times the box's own
/// dimension, then clamps the result to the image bounds.
///
/// With `m = margin`: `x -= m*w`, `y -= m*h`, `w *= 1 + 2m`, `h *= 1 + 2m`.
pub fn expand_with_margin(b: &BBox, margin: f64, bounds: ImageBounds) -> BBox {
    let x1 = b.x - margin * b.w;
    let y1 = b.y - margin * b.h;
    let x2 = b.x + b.w + margin * b.w;
    let y2 = b.y + b.h + margin * b.h;
    let w = bounds.width as f64;
    let h = bounds.height as f64;
    let cx1 = x1.max(0.0).min(w);
    let cy1 = y1.max(0.0).min(h);
    let cx2 = x2.min(w).max(cx1);
    let cy2 = y2.min(h).max(cy1);
    BBox::new(cx1, cy1, cx2 - cx1, cy2 - cy1)
}
