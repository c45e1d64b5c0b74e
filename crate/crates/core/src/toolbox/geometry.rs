use serde::Serialize;

use super::ToolError;
use crate::trajectory::{BoundingBox, BOX_SCALE};

/// Intersection over union of two normalized boxes. Degenerate boxes have
/// zero area; the result is zero when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0) as i64;
    let iy = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0) as i64;
    let inter = if a.is_degenerate() || b.is_degenerate() {
        0
    } else {
        ix * iy
    };
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixel crop inside a source image, `left < right` and `top < bottom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }
}

fn scale(v: i32, extent: u32) -> u32 {
    let scaled = (v as u64 * extent as u64 + BOX_SCALE as u64 / 2) / BOX_SCALE as u64;
    (scaled as u32).min(extent)
}

/// Map a normalized box onto a `width x height` image, rounding each edge to
/// the nearest pixel.
pub fn denormalize(b: &BoundingBox, width: u32, height: u32) -> Result<PixelRect, ToolError> {
    if width == 0 || height == 0 {
        return Err(ToolError::ImageDimensions { width, height });
    }
    if b.is_degenerate() {
        return Err(ToolError::DegenerateBox(*b));
    }
    let rect = PixelRect {
        left: scale(b.x1(), width),
        top: scale(b.y1(), height),
        right: scale(b.x2(), width),
        bottom: scale(b.y2(), height),
    };
    if rect.left >= rect.right || rect.top >= rect.bottom {
        return Err(ToolError::DegenerateBox(*b));
    }
    Ok(rect)
}
