use std::fmt::Write as _;
use std::path::Path;

use crate::boxes::GroundTruthBox;
use crate::error::{Error, Result};

/// Parses `class_id cx cy w h` lines. Blank lines are ignored; centers must
/// lie in [0, 1] and sizes in (0, 1].
pub fn parse_annotations_str(text: &str) -> Result<Vec<GroundTruthBox>> {
    let mut boxes = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields \"class_id cx cy w h\", found {}", fields.len()),
            });
        }
        let class_id: usize = fields[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("class id {:?} is not a non-negative integer", fields[0]),
        })?;
        let mut v = [0.0; 4];
        for (k, name) in ["cx", "cy", "w", "h"].into_iter().enumerate() {
            let s = fields[k + 1];
            v[k] = s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("{name} {s:?} is not a number"),
            })?;
            let ok = if k < 2 {
                (0.0..=1.0).contains(&v[k])
            } else {
                v[k] > 0.0 && v[k] <= 1.0
            };
            if !ok {
                return Err(Error::OutOfRange {
                    line,
                    field: name,
                    value: s.to_string(),
                });
            }
        }
        boxes.push(GroundTruthBox::new(class_id, v[0], v[1], v[2], v[3]));
    }
    Ok(boxes)
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text)
}

/// One line per box with six decimals.
pub fn format_annotations(boxes: &[GroundTruthBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h
        );
    }
    out
}

pub fn save_annotations(path: impl AsRef<Path>, boxes: &[GroundTruthBox]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_annotations(boxes)).map_err(|e| Error::io(path, e))
}
