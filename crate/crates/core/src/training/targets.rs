use crate::boxes::GroundTruthBox;
use crate::detection::{encode_box, AnchorSet, HeadLayout};
use crate::error::{Error, Result};

/// Regression and class target of one responsible (cell, anchor) slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotTarget {
    /// Target for `σ(t_x)`, the center offset inside the cell.
    pub offset_x: f64,
    pub offset_y: f64,
    /// Target for the raw `t_w = ln(w / anchor_w)`.
    pub tw: f64,
    pub th: f64,
    pub class_id: usize,
}

/// Per-slot training targets for one image. Slots without an entry are not
/// responsible for any object and have objectness target 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetTensor {
    pub layout: HeadLayout,
    slots: Vec<Option<SlotTarget>>,
}

impl TargetTensor {
    pub fn empty(layout: HeadLayout) -> Self {
        TargetTensor {
            layout,
            slots: vec![None; layout.slots()],
        }
    }

    fn slot_index(&self, anchor: usize, row: usize, col: usize) -> usize {
        (anchor * self.layout.grid + row) * self.layout.grid + col
    }

    pub fn get(&self, anchor: usize, row: usize, col: usize) -> Option<&SlotTarget> {
        self.slots[self.slot_index(anchor, row, col)].as_ref()
    }

    pub fn responsible_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// `(anchor, row, col, target)` for every responsible slot.
    pub fn responsible(&self) -> impl Iterator<Item = (usize, usize, usize, &SlotTarget)> {
        let g = self.layout.grid;
        self.slots.iter().enumerate().filter_map(move |(idx, s)| {
            s.as_ref().map(|t| (idx / (g * g), (idx / g) % g, idx % g, t))
        })
    }
}

fn check_box(gt: &GroundTruthBox, num_classes: usize) -> Result<()> {
    let b = &gt.bbox;
    for (name, v) in [("cx", b.cx), ("cy", b.cy), ("w", b.w), ("h", b.h)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "ground-truth {name} = {v} outside [0, 1]"
            )));
        }
    }
    if b.w <= 0.0 || b.h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ground-truth box has non-positive size {}x{}",
            b.w, b.h
        )));
    }
    if gt.class_id >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "class id {} not below {num_classes}",
            gt.class_id
        )));
    }
    Ok(())
}

/// Assigns each ground truth to the cell containing its center and to the
/// anchor with the best shape IoU. When two boxes want the same slot the
/// larger one wins and the other falls back to its next-best free anchor,
/// or is dropped with a warning if none is left.
pub fn assign_targets(
    gts: &[GroundTruthBox],
    anchors: &AnchorSet,
    grid: usize,
    num_classes: usize,
) -> Result<TargetTensor> {
    for gt in gts {
        check_box(gt, num_classes)?;
    }
    let layout = HeadLayout {
        grid,
        num_anchors: anchors.len(),
        num_classes,
    };
    let mut target = TargetTensor::empty(layout);
    let mut order: Vec<&GroundTruthBox> = gts.iter().collect();
    order.sort_by(|a, b| b.bbox.area().total_cmp(&a.bbox.area()));
    for gt in order {
        let size = (gt.bbox.w, gt.bbox.h);
        let placed = anchors.ranked(size).into_iter().find_map(|a| {
            let enc = encode_box(&gt.bbox, anchors.as_slice()[a], grid);
            let idx = target.slot_index(a, enc.row, enc.col);
            target.slots[idx].is_none().then_some((idx, enc))
        });
        match placed {
            Some((idx, enc)) => {
                target.slots[idx] = Some(SlotTarget {
                    offset_x: enc.offset_x,
                    offset_y: enc.offset_y,
                    tw: enc.tw,
                    th: enc.th,
                    class_id: gt.class_id,
                });
            }
            None => log::warn!(
                "dropping ground truth {:?}: every anchor of its cell is taken",
                gt.bbox
            ),
        }
    }
    Ok(target)
}
