use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PAD_VALUE: f32 = 0.5;
const MIN_TARGET: usize = 8;

/// Placement of a source image inside the square network input.
/// A source pixel coordinate `x` lands at `pad_x + scale · x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: usize,
    pub pad_y: usize,
    /// Extent of the resized content inside the target.
    pub content_width: usize,
    pub content_height: usize,
    pub source_width: usize,
    pub source_height: usize,
    pub target: usize,
}

impl LetterboxTransform {
    pub fn new(source_width: usize, source_height: usize, target: usize) -> Self {
        let scale = (target as f64 / source_width as f64).min(target as f64 / source_height as f64);
        let content_width = ((source_width as f64 * scale).round() as usize).clamp(1, target);
        let content_height = ((source_height as f64 * scale).round() as usize).clamp(1, target);
        LetterboxTransform {
            scale,
            pad_x: (target - content_width) / 2,
            pad_y: (target - content_height) / 2,
            content_width,
            content_height,
            source_width,
            source_height,
            target,
        }
    }

    /// Network pixel coordinates to source pixel coordinates.
    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.pad_x as f64) / self.scale, (y - self.pad_y as f64) / self.scale)
    }

    pub fn to_network(&self, x: f64, y: f64) -> (f64, f64) {
        (self.pad_x as f64 + x * self.scale, self.pad_y as f64 + y * self.scale)
    }

    /// Box normalized to the network input to a box normalized to the source.
    pub fn box_to_source(&self, b: &BBox) -> BBox {
        let t = self.target as f64;
        let (cx, cy) = self.to_source(b.cx * t, b.cy * t);
        BBox::new(
            cx / self.source_width as f64,
            cy / self.source_height as f64,
            b.w * t / self.scale / self.source_width as f64,
            b.h * t / self.scale / self.source_height as f64,
        )
    }

    pub fn box_to_network(&self, b: &BBox) -> BBox {
        let t = self.target as f64;
        let (cx, cy) = self.to_network(b.cx * self.source_width as f64, b.cy * self.source_height as f64);
        BBox::new(
            cx / t,
            cy / t,
            b.w * self.source_width as f64 * self.scale / t,
            b.h * self.source_height as f64 * self.scale / t,
        )
    }
}

/// Aspect-preserving bilinear resize into a `target × target` canvas,
/// centered and padded with mid gray.
pub fn letterbox(image: &Tensor<f32>, target: usize) -> Result<(Tensor<f32>, LetterboxTransform)> {
    if target < MIN_TARGET {
        return Err(Error::InvalidArgument(format!(
            "letterbox target {target} below {MIN_TARGET}"
        )));
    }
    let (b, c, h, w) = image.dims4()?;
    if b != 1 {
        return Err(Error::InvalidArgument(format!("letterbox takes one image, got a batch of {b}")));
    }
    let tr = LetterboxTransform::new(w, h, target);
    let mut out = vec![PAD_VALUE; c * target * target];
    let src = image.data();
    let sample = |s: f64, n: usize| {
        let s = s.clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    for y in 0..tr.content_height {
        let (y0, y1, fy) = sample((y as f64 + 0.5) / tr.scale - 0.5, h);
        for x in 0..tr.content_width {
            let (x0, x1, fx) = sample((x as f64 + 0.5) / tr.scale - 0.5, w);
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[(ch * target + tr.pad_y + y) * target + tr.pad_x + x] =
                    top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok((Tensor::from_vec(&[c, target, target], out)?, tr))
}
