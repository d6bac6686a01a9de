use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_annotations, save_ppm, write_manifest, CLASS_TABLE};
use crate::boxes::GroundTruthBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CLASS_NAMES: [&str; 11] = [
    "car", "truck", "van", "pickup", "tractor", "boat", "camping", "bus", "plane", "motorcycle",
    "other",
];
const PALETTE: [[f32; 3]; 8] = [
    [0.9, 0.12, 0.1],
    [0.1, 0.3, 0.95],
    [0.98, 0.92, 0.15],
    [0.95, 0.95, 0.95],
    [0.1, 0.85, 0.85],
    [0.85, 0.2, 0.85],
    [0.05, 0.05, 0.05],
    [1.0, 0.55, 0.0],
];
const ASPECTS: [f64; 4] = [0.5, 0.35, 0.7, 0.42];
const PLACEMENT_TRIES: usize = 30;

/// Parameters of the synthetic aerial-scene generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Vehicle length range in pixels.
    pub min_size_px: usize,
    pub max_size_px: usize,
    pub num_classes: usize,
    /// Amount of distractor texture, shadows and occluders, in [0, 1].
    pub clutter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 152,
            min_objects: 3,
            max_objects: 8,
            min_size_px: 10,
            max_size_px: 40,
            num_classes: 4,
            clutter: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size < 8 {
            return bad(format!("image size {} below 8", self.image_size));
        }
        if self.min_objects > self.max_objects {
            return bad(format!(
                "object count range {}..{} is empty",
                self.min_objects, self.max_objects
            ));
        }
        if self.min_size_px < 2 || self.min_size_px > self.max_size_px {
            return bad(format!(
                "size range {}..{} px must satisfy 2 <= min <= max",
                self.min_size_px, self.max_size_px
            ));
        }
        if self.max_size_px > self.image_size {
            return bad(format!(
                "objects up to {} px do not fit a {} px image",
                self.max_size_px, self.image_size
            ));
        }
        if self.num_classes == 0 {
            return bad("at least one class is required".into());
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return bad(format!("clutter {} outside [0, 1]", self.clutter));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|c| CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()))
            .collect()
    }
}

fn class_color(c: usize) -> [f32; 3] {
    if c < PALETTE.len() {
        return PALETTE[c];
    }
    let hue = (c as f32 * 0.618_034).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    match hue as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let plane = self.size * self.size;
        for (c, v) in rgb.into_iter().enumerate() {
            self.px[c * plane + y * self.size + x] = v;
        }
    }

    fn scale(&mut self, x: usize, y: usize, f: f32) {
        let plane = self.size * self.size;
        for c in 0..3 {
            self.px[c * plane + y * self.size + x] *= f;
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [f32; 3]) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                self.set(x, y, rgb);
            }
        }
    }

    fn fill_disk(&mut self, cx: f64, cy: f64, r: f64, rgb: [f32; 3]) {
        let (lo_x, hi_x) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil() as usize);
        let (lo_y, hi_y) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil() as usize);
        for y in lo_y..hi_y.min(self.size) {
            for x in lo_x..hi_x.min(self.size) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.set(x, y, rgb);
                }
            }
        }
    }
}

fn background(canvas: &mut Canvas, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
    let s = canvas.size;
    let cells = s / 16 + 2;
    let coarse: Vec<f32> = (0..cells * cells).map(|_| rng.gen()).collect();
    let base = [0.32, 0.42, 0.24];
    let soil = [0.5, 0.42, 0.3];
    let plane = s * s;
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f32 / 16.0, y as f32 / 16.0);
            let (ix, iy) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - ix as f32, fy - iy as f32);
            let at = |i: usize, j: usize| coarse[j * cells + i];
            let v = (at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx) * (1.0 - ty)
                + (at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx) * ty;
            let grain = (rng.gen::<f32>() - 0.5) * 0.06 * (0.5 + cfg.clutter as f32);
            for c in 0..3 {
                canvas.px[c * plane + y * s + x] = base[c] * (1.0 - v) + soil[c] * v + grain;
            }
        }
    }
    for _ in 0..rng.gen_range(1..=2) {
        let width = rng.gen_range(s / 12..=s / 6).max(3);
        let at = rng.gen_range(0..s - width);
        let vertical = rng.gen_bool(0.5);
        let road = [0.42, 0.42, 0.44];
        let (x0, y0, w, h) = if vertical { (at, 0, width, s) } else { (0, at, s, width) };
        canvas.fill_rect(x0, y0, w, h, road);
        let mid = at + width / 2;
        for k in (0..s).step_by(8) {
            let (mx, my, mw, mh) = if vertical { (mid, k, 1, 4) } else { (k, mid, 4, 1) };
            canvas.fill_rect(mx, my, mw, mh, [0.85, 0.85, 0.8]);
        }
    }
    let distractors = (cfg.clutter * 8.0).round() as usize;
    for _ in 0..distractors {
        let w = rng.gen_range(4..=(s / 5).max(5));
        let h = rng.gen_range(4..=(s / 5).max(5));
        let g = rng.gen_range(0.25f32..0.65);
        let tint = rng.gen_range(-0.04f32..0.04);
        canvas.fill_rect(
            rng.gen_range(0..s - w.min(s - 1)),
            rng.gen_range(0..s - h.min(s - 1)),
            w,
            h,
            [g + tint, g, g - tint],
        );
    }
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    a.0 < b.0 + b.2 + 1 && b.0 < a.0 + a.2 + 1 && a.1 < b.1 + b.3 + 1 && b.1 < a.1 + a.3 + 1
}

/// Renders scene `index` of the synthetic set described by `cfg`: a textured
/// background with roads and distractors, and vehicles whose size band,
/// aspect, color and shape depend on their class. Boxes are the exact pixel
/// extents of each vehicle, normalized. Occluders and shadows may cover
/// vehicles partially without changing their boxes.
pub fn synth_scene(cfg: &SynthConfig, index: usize) -> Result<(Tensor<f32>, Vec<GroundTruthBox>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let s = cfg.image_size;
    let mut canvas = Canvas {
        size: s,
        px: vec![0.0; 3 * s * s],
    };
    background(&mut canvas, cfg, &mut rng);

    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let (lo, hi) = (cfg.min_size_px as f64, cfg.max_size_px as f64);
    let band = (hi - lo) / cfg.num_classes as f64;
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut boxes = Vec::new();
    for _ in 0..count {
        let class = rng.gen_range(0..cfg.num_classes);
        let length = (lo + band * (class as f64 + rng.gen_range(0.15..0.85))).round() as usize;
        let length = length.clamp(cfg.min_size_px, cfg.max_size_px);
        let thick = ((length as f64 * ASPECTS[class % ASPECTS.len()]).round() as usize).max(2);
        let (bw, bh) = if rng.gen_bool(0.5) { (length, thick) } else { (thick, length) };
        let spot = (0..PLACEMENT_TRIES)
            .map(|_| (rng.gen_range(0..=s - bw), rng.gen_range(0..=s - bh), bw, bh))
            .find(|r| placed.iter().all(|p| !overlaps(*r, *p)));
        let Some(rect) = spot else { continue };
        placed.push(rect);
        let (x0, y0, _, _) = rect;

        if rng.gen_bool(0.5 * cfg.clutter) {
            for y in y0 + 2..(y0 + bh + 2).min(s) {
                for x in x0 + 2..(x0 + bw + 2).min(s) {
                    canvas.scale(x, y, 0.55);
                }
            }
        }
        let color = class_color(class);
        if class % 3 == 1 {
            let (cx, cy) = (x0 as f64 + bw as f64 / 2.0, y0 as f64 + bh as f64 / 2.0);
            let (rx, ry) = (bw as f64 / 2.0, bh as f64 / 2.0);
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                    // the inscribed ellipse, with the box's middle row and column always set
                    if dx * dx + dy * dy <= 1.0 || x == x0 + bw / 2 || y == y0 + bh / 2 {
                        canvas.set(x, y, color);
                    }
                }
            }
        } else {
            canvas.fill_rect(x0, y0, bw, bh, color);
            let dark = color.map(|v| v * 0.35);
            if bw >= bh {
                let wx = x0 + bw * 2 / 3;
                canvas.fill_rect(wx, y0 + 1, (bw / 8).max(1), bh.saturating_sub(2).max(1), dark);
            } else {
                let wy = y0 + bh * 2 / 3;
                canvas.fill_rect(x0 + 1, wy, bw.saturating_sub(2).max(1), (bh / 8).max(1), dark);
            }
        }
        if rng.gen_bool(0.2 * cfg.clutter) {
            let r = 0.4 * bw.min(bh) as f64;
            let cx = x0 as f64 + if rng.gen_bool(0.5) { 0.0 } else { bw as f64 };
            let cy = y0 as f64 + if rng.gen_bool(0.5) { 0.0 } else { bh as f64 };
            canvas.fill_disk(cx, cy, r, [0.12, 0.3, 0.1]);
        }
        let sf = s as f64;
        boxes.push(GroundTruthBox::new(
            class,
            (x0 as f64 + bw as f64 / 2.0) / sf,
            (y0 as f64 + bh as f64 / 2.0) / sf,
            bw as f64 / sf,
            bh as f64 / sf,
        ));
    }
    canvas.px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok((Tensor::from_vec(&[3, s, s], canvas.px)?, boxes))
}

/// Writes `count` scenes as `scene_NNNN.ppm` / `.txt` pairs plus a manifest
/// and class table into `dir`. Returns the manifest path.
pub fn write_synthetic_dataset(cfg: &SynthConfig, count: usize, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let (image, boxes) = synth_scene(cfg, i)?;
        let name = format!("scene_{i:04}");
        save_ppm(&image, dir.join(format!("{name}.ppm")))?;
        save_annotations(dir.join(format!("{name}.txt")), &boxes)?;
        images.push(PathBuf::from(format!("{name}.ppm")));
    }
    let classes = dir.join(CLASS_TABLE);
    let mut table = cfg.class_names().join("\n");
    table.push('\n');
    std::fs::write(&classes, table).map_err(|e| Error::io(&classes, e))?;
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &images)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_count_range() {
        let cfg = SynthConfig {
            min_objects: 0,
            max_objects: 0,
            ..SynthConfig::default()
        };
        let (img, boxes) = synth_scene(&cfg, 3).unwrap();
        assert!(boxes.is_empty());
        assert_eq!(img.shape(), &[3, 152, 152]);
    }

    #[test]
    fn deterministic_per_index() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_scene(&cfg, 5).unwrap().1, synth_scene(&cfg, 5).unwrap().1);
        assert_eq!(synth_scene(&cfg, 5).unwrap().0, synth_scene(&cfg, 5).unwrap().0);
        assert_ne!(synth_scene(&cfg, 5).unwrap().1, synth_scene(&cfg, 6).unwrap().1);
    }

    #[test]
    fn oversized_objects_rejected() {
        let cfg = SynthConfig {
            image_size: 32,
            max_size_px: 40,
            ..SynthConfig::default()
        };
        assert!(synth_scene(&cfg, 0).is_err());
    }

    #[test]
    fn vehicle_pixels_carry_class_color() {
        let cfg = SynthConfig {
            clutter: 0.0,
            ..SynthConfig::default()
        };
        let (img, boxes) = synth_scene(&cfg, 1).unwrap();
        let s = cfg.image_size;
        for b in boxes {
            let (x, y) = ((b.bbox.cx * s as f64) as usize, (b.bbox.cy * s as f64) as usize);
            let rgb: Vec<f32> = (0..3).map(|c| img.data()[c * s * s + y * s + x]).collect();
            let want = class_color(b.class_id);
            let dark = want.map(|v| v * 0.35);
            assert!(rgb == want || rgb == dark, "{rgb:?} vs {want:?}");
        }
    }
}
