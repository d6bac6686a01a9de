//! Axis-aligned boxes in normalized center/size form.

use crate::error::{Error, Result};

/// Center-size box; coordinates are fractions of the image extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection over union; both boxes are assumed to have positive extents.
    pub fn iou(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        let area_a = (ax1 - ax0) * (ay1 - ay0);
        let area_b = (bx1 - bx0) * (by1 - by0);
        let union = area_a + area_b - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// Clips the box to the unit square. Returns `None` if nothing remains.
    pub fn clipped(&self) -> Option<BBox> {
        let (x0, y0, x1, y1) = self.corners();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(1.0), y1.min(1.0));
        (x1 > x0 && y1 > y0).then(|| BBox::from_corners(x0, y0, x1, y1))
    }
}

/// Annotated object: class and normalized center/size box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub class_id: usize,
    pub bbox: BBox,
}

impl GroundTruthBox {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        GroundTruthBox {
            class_id,
            bbox: BBox::new(cx, cy, w, h),
        }
    }
}

/// Checked IoU: errors on non-positive widths or heights.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "iou needs positive extents, got w={} h={}",
                bx.w, bx.h
            )));
        }
    }
    Ok(a.iou(b))
}

/// IoU of two co-centered boxes given only their sizes.
pub fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        let a = BBox::new(0.5, 0.5, 0.2, 0.3);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = BBox::new(0.1, 0.1, 0.1, 0.1);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn half_overlapping_squares() {
        let a = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BBox::from_corners(1.0, 0.0, 3.0, 2.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_extent_rejected() {
        let a = BBox::new(0.5, 0.5, 0.0, 0.3);
        assert!(iou(&a, &a).is_err());
        let b = BBox::new(0.5, 0.5, 0.1, -0.3);
        assert!(iou(&b, &a).is_err());
    }

    #[test]
    fn shape_iou_of_nested_sizes() {
        assert_eq!(shape_iou((0.2, 0.2), (0.2, 0.2)), 1.0);
        assert!((shape_iou((0.1, 0.1), (0.2, 0.2)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let b = BBox::new(0.0, 0.5, 0.2, 0.2).clipped().unwrap();
        assert!((b.w - 0.1).abs() < 1e-15 && (b.cx - 0.05).abs() < 1e-15);
        assert!(BBox::new(-1.0, 0.5, 0.2, 0.2).clipped().is_none());
    }
}
