//! Anchor-grid decoding of the head tensor, non-maximum suppression, and
//! k-means anchor generation.

mod anchors;
mod nms;

use std::fmt::Write as _;
use std::path::Path;

pub use anchors::{kmeans_anchors, kmeans_objective, kmeans_trace, AnchorSet, KMEANS_MAX_ROUNDS};
pub use nms::nms;

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_CONF_THRESH: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

/// Offsets inside a cell are kept this far from 0 and 1 so their logits stay finite.
const OFFSET_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Softmax of `logits` written into `out`.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Index into a `(anchors·(5+C)) × S × S` head tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub grid: usize,
    pub num_anchors: usize,
    pub num_classes: usize,
}

impl HeadLayout {
    pub fn channels(&self) -> usize {
        self.num_anchors * (5 + self.num_classes)
    }

    /// Flat offset of `field` (0..5+C) for anchor `a` at cell row `i`, column `j`.
    pub fn index(&self, a: usize, field: usize, i: usize, j: usize) -> usize {
        ((a * (5 + self.num_classes) + field) * self.grid + i) * self.grid + j
    }

    pub fn slots(&self) -> usize {
        self.num_anchors * self.grid * self.grid
    }
}

/// Grid cell `(row, col)` owning a normalized center.
pub fn cell_of(cx: f64, cy: f64, grid: usize) -> (usize, usize) {
    let cell = |v: f64| ((v * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    (cell(cy), cell(cx))
}

/// Encoded regression target of a box for one anchor: cell `(row, col)`,
/// the in-cell offsets `(σ(t_x), σ(t_y))` and the log-size ratios `(t_w, t_h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodedBox {
    pub row: usize,
    pub col: usize,
    pub offset_x: f64,
    pub offset_y: f64,
    pub tw: f64,
    pub th: f64,
}

impl EncodedBox {
    /// Raw logits `(t_x, t_y, t_w, t_h)` that decode back to the box.
    pub fn logits(&self) -> [f64; 4] {
        [logit(self.offset_x), logit(self.offset_y), self.tw, self.th]
    }
}

/// Inverse of the decoder's box transform.
pub fn encode_box(bbox: &BBox, anchor: (f64, f64), grid: usize) -> EncodedBox {
    let (row, col) = cell_of(bbox.cx, bbox.cy, grid);
    let s = grid as f64;
    let clamp = |v: f64| v.clamp(OFFSET_MARGIN, 1.0 - OFFSET_MARGIN);
    EncodedBox {
        row,
        col,
        offset_x: clamp(bbox.cx * s - col as f64),
        offset_y: clamp(bbox.cy * s - row as f64),
        tw: (bbox.w / anchor.0).ln(),
        th: (bbox.h / anchor.1).ln(),
    }
}

/// Box decoded from raw logits at cell `(row, col)` for `anchor`.
pub fn decode_box(t: [f64; 4], row: usize, col: usize, anchor: (f64, f64), grid: usize) -> BBox {
    let s = grid as f64;
    BBox {
        cx: (sigmoid(t[0]) + col as f64) / s,
        cy: (sigmoid(t[1]) + row as f64) / s,
        w: anchor.0 * t[2].exp(),
        h: anchor.1 * t[3].exp(),
    }
}

/// Turns a raw `(A·(5+C)) × S × S` head tensor (or a batch of one) into
/// detections with `score = σ(objectness) · max softmax(class)` at or above
/// `conf_thresh`. Boxes are not clipped.
pub fn decode<T: Scalar>(
    raw: &Tensor<T>,
    anchors: &AnchorSet,
    num_classes: usize,
    conf_thresh: f64,
) -> Result<Vec<Detection>> {
    let (b, ch, h, w) = raw.dims4()?;
    let layout = HeadLayout {
        grid: h,
        num_anchors: anchors.len(),
        num_classes,
    };
    if b != 1 || h != w {
        return Err(Error::InvalidArgument(format!(
            "decode expects one square head map, got {:?}",
            raw.shape()
        )));
    }
    if ch != layout.channels() {
        return Err(Error::ChannelMismatch {
            expected: layout.channels(),
            actual: ch,
        });
    }
    let data = raw.item(0);
    let at = |a, f, i, j| data[layout.index(a, f, i, j)].as_f64();
    let mut logits = vec![0.0; num_classes];
    let mut probs = vec![0.0; num_classes];
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            for (a, &anchor) in anchors.iter().enumerate() {
                let objectness = sigmoid(at(a, 4, i, j));
                for (c, l) in logits.iter_mut().enumerate() {
                    *l = at(a, 5 + c, i, j);
                }
                softmax(&logits, &mut probs);
                let (class_id, best) = probs
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (c, p)| if p > acc.1 { (c, p) } else { acc });
                let score = objectness * best;
                if score >= conf_thresh {
                    let t = [at(a, 0, i, j), at(a, 1, i, j), at(a, 2, i, j), at(a, 3, i, j)];
                    out.push(Detection {
                        class_id,
                        score,
                        bbox: decode_box(t, i, j, anchor, h),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// One line per detection: `class_id score cx cy w h`, six decimals.
/// Forward pass, decode and per-class NMS for one network-resolution image.
pub fn detect<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    anchors: &AnchorSet,
    conf_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    if anchors.len() != net.spec().num_anchors {
        return Err(Error::InvalidArgument(format!(
            "{} anchors for a network with {} anchor slots",
            anchors.len(),
            net.spec().num_anchors
        )));
    }
    let raw = net.forward(image)?;
    Ok(nms(&decode(&raw, anchors, net.spec().num_classes, conf_thresh)?, nms_iou))
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.class_id, d.score, b.cx, b.cy, b.w, b.h
        );
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let class_id = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad class id {:?}", fields[0])))?;
        let mut vals = [0.0; 5];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.parse().map_err(|_| parse_err(format!("bad number {f:?}")))?;
        }
        out.push(Detection {
            class_id,
            score: vals[0],
            bbox: BBox::new(vals[1], vals[2], vals[3], vals[4]),
        });
    }
    Ok(out)
}

pub fn write_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_detections(dets)).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors(list: &[(f64, f64)]) -> AnchorSet {
        AnchorSet::new(list.to_vec()).unwrap()
    }

    #[test]
    fn zero_logits_decode_to_cell_center() {
        let set = anchors(&[(0.1, 0.1)]);
        let s = 3;
        let raw = Tensor::<f64>::zeros(&[7, s, s]);
        let dets = decode(&raw, &set, 2, 0.0).unwrap();
        assert_eq!(dets.len(), s * s);
        let first = dets[0];
        assert!((first.bbox.cx - 0.5 / 3.0).abs() < 1e-15);
        assert!((first.bbox.cy - 0.5 / 3.0).abs() < 1e-15);
        assert!((first.bbox.w - 0.1).abs() < 1e-15 && (first.bbox.h - 0.1).abs() < 1e-15);
        assert!((first.score - 0.25).abs() < 1e-15);
    }

    #[test]
    fn threshold_one_is_never_reached() {
        let set = anchors(&[(0.1, 0.1), (0.2, 0.3)]);
        let raw = Tensor::<f32>::full(&[14, 4, 4], 3.0);
        assert!(decode(&raw, &set, 2, 1.0).unwrap().is_empty());
    }

    #[test]
    fn channel_mismatch() {
        let set = anchors(&[(0.1, 0.1)]);
        let raw = Tensor::<f32>::zeros(&[8, 4, 4]);
        assert!(matches!(
            decode(&raw, &set, 2, 0.1),
            Err(Error::ChannelMismatch { expected: 7, actual: 8 })
        ));
    }

    #[test]
    fn encode_inverts_decode() {
        let b = BBox::new(0.437, 0.912, 0.05, 0.031);
        let anchor = (0.04, 0.02);
        let e = encode_box(&b, anchor, 19);
        let d = decode_box(e.logits(), e.row, e.col, anchor, 19);
        for (x, y) in [(b.cx, d.cx), (b.cy, d.cy), (b.w, d.w), (b.h, d.h)] {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_of_edges() {
        assert_eq!(cell_of(1.0, 1.0, 4), (3, 3));
        assert_eq!(cell_of(0.0, 0.0, 4), (0, 0));
        assert_eq!(cell_of(0.5 + 1e-9, 0.5 + 1e-9, 4), (2, 2));
    }

    #[test]
    fn detection_text_round_trip() {
        let dets = vec![
            Detection {
                class_id: 3,
                score: 0.5,
                bbox: BBox::new(0.25, 0.75, 0.125, 0.0625),
            },
            Detection {
                class_id: 0,
                score: 0.999999,
                bbox: BBox::new(0.1, 0.2, 0.3, 0.4),
            },
        ];
        let text = format_detections(&dets);
        assert_eq!(text.lines().next().unwrap(), "3 0.500000 0.250000 0.750000 0.125000 0.062500");
        assert_eq!(parse_detections(&text).unwrap(), dets);
        assert!(parse_detections("1 2 3").is_err());
    }
}
