use std::cmp::Ordering;

use super::Detection;

/// Descending score; ties go to the smaller `cx`, then the smaller `cy`.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
}

/// Greedy per-class suppression: a box survives iff its IoU with every
/// already kept box of its class is below `iou_thresh`. Survivors are
/// returned in rank order and are otherwise untouched.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let suppressed = kept
            .iter()
            .filter(|k| k.class_id == d.class_id)
            .any(|k| k.bbox.iou(&d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}
