use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::shape_iou;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ROUNDS: usize = 300;

/// Prior box shapes `(w, h)` as image fractions, sorted by area ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<(f64, f64)>,
}

impl AnchorSet {
    pub fn new(mut anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::InvalidArgument("anchor set is empty".into()));
        }
        if let Some(bad) = anchors
            .iter()
            .find(|(w, h)| !(w.is_finite() && h.is_finite() && *w > 0.0 && *h > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "anchor sizes must be positive, got {bad:?}"
            )));
        }
        anchors.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
        Ok(AnchorSet { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.anchors.iter()
    }

    pub fn as_slice(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    /// Anchors ranked by shape IoU with `size`, best first (ties: lower index).
    pub fn ranked(&self, size: (f64, f64)) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            shape_iou(size, self.anchors[b])
                .total_cmp(&shape_iou(size, self.anchors[a]))
                .then(a.cmp(&b))
        });
        idx
    }

    /// `k` lines of `w h`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (w, h) in &self.anchors {
            let _ = writeln!(s, "{w} {h}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut anchors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [w, h] => w.parse::<f64>().ok().zip(h.parse::<f64>().ok()),
                _ => None,
            };
            let pair = parsed.ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected \"w h\", found {line:?}"),
            })?;
            anchors.push(pair);
        }
        AnchorSet::new(anchors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AnchorSet::parse(&text)
    }
}

fn nearest(size: (f64, f64), centroids: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centroids.iter().enumerate() {
        let d = 1.0 - shape_iou(size, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Summed `1 − shape IoU` of every box to its nearest centroid.
pub fn kmeans_objective(boxes: &[(f64, f64)], centroids: &[(f64, f64)]) -> f64 {
    boxes
        .iter()
        .map(|&b| 1.0 - shape_iou(b, centroids[nearest(b, centroids)]))
        .sum()
}

/// Mean that is exact when every value is equal.
fn pivot_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let n = values.clone().count() as f64;
    first + values.map(|v| v - first).sum::<f64>() / n
}

/// Clusters box sizes with distance `1 − shape IoU`, starting from `k`
/// distinct boxes drawn with a seeded shuffle. Stops at an assignment fixed
/// point, a round that would raise the objective, or after
/// [`KMEANS_MAX_ROUNDS`] rounds.
pub fn kmeans_anchors(boxes: &[(f64, f64)], k: usize, seed: u64) -> Result<AnchorSet> {
    kmeans_trace(boxes, k, seed).map(|(set, _)| set)
}

/// Like [`kmeans_anchors`], also returning the objective at the start and
/// after each accepted round.
pub fn kmeans_trace(boxes: &[(f64, f64)], k: usize, seed: u64) -> Result<(AnchorSet, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if boxes.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k-means needs at least {k} boxes, got {}",
            boxes.len()
        )));
    }
    if let Some(bad) = boxes.iter().find(|(w, h)| !(*w > 0.0 && *h > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "box sizes must be positive, got {bad:?}"
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut centroids: Vec<(f64, f64)> = Vec::with_capacity(k);
    for &i in &order {
        if centroids.len() == k {
            break;
        }
        if !centroids.contains(&boxes[i]) {
            centroids.push(boxes[i]);
        }
    }
    if centroids.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} distinct box shapes are available for k = {k}; lower k or add more boxes",
            centroids.len()
        )));
    }

    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = vec![kmeans_objective(boxes, &centroids)];
    for _ in 0..KMEANS_MAX_ROUNDS {
        let next: Vec<usize> = boxes.iter().map(|&b| nearest(b, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let mut updated = centroids.clone();
        for (c, centroid) in updated.iter_mut().enumerate() {
            let members = boxes
                .iter()
                .zip(&assignment)
                .filter(move |(_, &a)| a == c)
                .map(|(b, _)| *b);
            if members.clone().next().is_none() {
                continue;
            }
            *centroid = (
                pivot_mean(members.clone().map(|b| b.0)),
                pivot_mean(members.map(|b| b.1)),
            );
        }
        let objective = kmeans_objective(boxes, &updated);
        // the mean is not the 1 − IoU minimizer, so a round can overshoot
        if objective > trace[trace.len() - 1] {
            break;
        }
        centroids = updated;
        trace.push(objective);
    }
    Ok((AnchorSet::new(centroids)?, trace))
}
