//! Detection-to-truth matching, interpolated average precision and
//! precision-recall export.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::boxes::GroundTruthBox;
use crate::detection::Detection;
use crate::error::{Error, Result};

pub const DEFAULT_EVAL_IOU: f64 = 0.5;

/// A detection's score and whether it matched a ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredLabel {
    pub score: f64,
    pub true_positive: bool,
}

impl ScoredLabel {
    pub fn tp(score: f64) -> Self {
        ScoredLabel {
            score,
            true_positive: true,
        }
    }

    pub fn fp(score: f64) -> Self {
        ScoredLabel {
            score,
            true_positive: false,
        }
    }
}

/// Average precision of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassAp {
    Defined(f64),
    /// No ground truth and no detections.
    Skipped,
}

impl ClassAp {
    pub fn value(self) -> Option<f64> {
        match self {
            ClassAp::Defined(v) => Some(v),
            ClassAp::Skipped => None,
        }
    }
}

impl fmt::Display for ClassAp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassAp::Defined(v) => write!(f, "{v:.6}"),
            ClassAp::Skipped => f.write_str("skipped"),
        }
    }
}

/// Score descending; equal scores fall back to smaller `cx`, then `cy`.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
}

/// Labels every detection of one image and class as true or false positive,
/// returned in input order. Detections claim ground truths greedily in rank
/// order, each taking its best-overlapping unclaimed box if that overlap
/// reaches `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], iou_thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank(&dets[a], &dets[b]));
    let mut claimed = vec![false; gts.len()];
    let mut labels = vec![false; dets.len()];
    for i in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !claimed[*g])
            .map(|(g, gt)| (g, dets[i].bbox.iou(&gt.bbox)))
            .fold(None, |best: Option<(usize, f64)>, (g, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((g, v)),
            });
        if let Some((g, v)) = best {
            if v >= iou_thresh {
                claimed[g] = true;
                labels[i] = true;
            }
        }
    }
    labels
}

fn sorted_by_score(labels: &[ScoredLabel]) -> Vec<ScoredLabel> {
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    sorted
}

/// All-point interpolated average precision. Labels are ranked by score
/// (stable, so equal scores keep their given order).
pub fn average_precision(labels: &[ScoredLabel], num_gt: usize) -> ClassAp {
    if num_gt == 0 {
        if labels.is_empty() {
            return ClassAp::Skipped;
        }
        log::warn!(
            "{} detections for a class without ground truth; AP is 0",
            labels.len()
        );
        return ClassAp::Defined(0.0);
    }
    let sorted = sorted_by_score(labels);
    let mut precision = Vec::with_capacity(sorted.len());
    let mut recall = Vec::with_capacity(sorted.len());
    let mut tp = 0usize;
    for (n, l) in sorted.iter().enumerate() {
        tp += l.true_positive as usize;
        precision.push(tp as f64 / (n + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ClassAp::Defined(ap)
}

/// Mean of the defined class APs.
pub fn mean_ap(per_class: &[ClassAp]) -> Result<f64> {
    let defined: Vec<f64> = per_class.iter().filter_map(|a| a.value()).collect();
    if defined.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has ground truth to evaluate".into(),
        ));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    /// Score of the detection that produced this point.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision-recall staircase, one point per ranked detection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn new(labels: &[ScoredLabel], num_gt: usize) -> Self {
        let mut tp = 0usize;
        let points = sorted_by_score(labels)
            .iter()
            .enumerate()
            .map(|(n, l)| {
                tp += l.true_positive as usize;
                PrPoint {
                    threshold: l.score,
                    recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
                    precision: tp as f64 / (n + 1) as f64,
                }
            })
            .collect();
        PrCurve { points }
    }

    /// Area under the curve after replacing each precision by the maximum
    /// precision at equal or higher recall.
    pub fn interpolated_area(&self) -> f64 {
        let mut area = 0.0;
        let mut prev = 0.0;
        for (k, p) in self.points.iter().enumerate() {
            let best = self.points[k..]
                .iter()
                .map(|q| q.precision)
                .fold(0.0, f64::max);
            area += (p.recall - prev) * best;
            prev = p.recall;
        }
        area
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,recall,precision\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.recall, p.precision);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Detections and ground truth of one image.
#[derive(Clone, Debug, Default)]
pub struct ImageResult {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthBox>,
}

#[derive(Clone, Debug)]
pub struct ClassReport {
    pub class_id: usize,
    pub num_gt: usize,
    pub ap: ClassAp,
    pub curve: PrCurve,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// `None` when no class has ground truth.
    pub map: Option<f64>,
}

impl EvalReport {
    /// `class=<id> ap=<value>` per class, then `map=<value>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            let _ = writeln!(out, "class={} ap={}", c.class_id, c.ap);
        }
        match self.map {
            Some(m) => {
                let _ = writeln!(out, "map={m:.6}");
            }
            None => out.push_str("map=skipped\n"),
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-class AP and mAP over a dataset. Detections of equal score are ranked
/// by image index and then `cx`. Classes without ground truth are reported
/// but excluded from the mean.
pub fn evaluate(images: &[ImageResult], num_classes: usize, iou_thresh: f64) -> Result<EvalReport> {
    for img in images {
        for id in img
            .detections
            .iter()
            .map(|d| d.class_id)
            .chain(img.ground_truth.iter().map(|g| g.class_id))
        {
            if id >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class id {id} not below {num_classes}"
                )));
            }
        }
    }
    let mut classes = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut pooled: Vec<(usize, Detection, bool)> = Vec::new();
        let mut num_gt = 0;
        for (n, img) in images.iter().enumerate() {
            let dets: Vec<Detection> = img
                .detections
                .iter()
                .filter(|d| d.class_id == class)
                .copied()
                .collect();
            let gts: Vec<GroundTruthBox> = img
                .ground_truth
                .iter()
                .filter(|g| g.class_id == class)
                .copied()
                .collect();
            num_gt += gts.len();
            let labels = match_detections(&dets, &gts, iou_thresh);
            pooled.extend(dets.into_iter().zip(labels).map(|(d, l)| (n, d, l)));
        }
        pooled.sort_by(|a, b| {
            b.1.score
                .total_cmp(&a.1.score)
                .then(a.0.cmp(&b.0))
                .then(a.1.bbox.cx.total_cmp(&b.1.bbox.cx))
                .then(a.1.bbox.cy.total_cmp(&b.1.bbox.cy))
        });
        let labels: Vec<ScoredLabel> = pooled
            .iter()
            .map(|(_, d, tp)| ScoredLabel {
                score: d.score,
                true_positive: *tp,
            })
            .collect();
        classes.push(ClassReport {
            class_id: class,
            num_gt,
            ap: average_precision(&labels, num_gt),
            curve: PrCurve::new(&labels, num_gt),
        });
    }
    let counted: Vec<ClassAp> = classes
        .iter()
        .map(|c| if c.num_gt > 0 { c.ap } else { ClassAp::Skipped })
        .collect();
    Ok(EvalReport {
        map: mean_ap(&counted).ok(),
        classes,
    })
}
