use anyhow::{ensure, Result};
use avdnet::detection::Detection;
use avdnet::Tensor;

const OUTLINE_PX: usize = 2;
const COLORS: [[f32; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.4, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Copy of `image` with a two-pixel outline around each (clipped) box.
pub fn draw_boxes(image: &Tensor<f32>, dets: &[Detection]) -> Result<Tensor<f32>> {
    let (b, c, h, w) = image.dims4()?;
    ensure!(b == 1 && c == 3, "expected one RGB image, got shape {:?}", image.shape());
    let mut out = image.clone();
    let data = out.data_mut();
    let plane = h * w;
    for d in dets {
        let Some(bx) = d.bbox.clipped() else { continue };
        let (x0, y0, x1, y1) = bx.corners();
        let px = |v: f64, n: usize| ((v * n as f64).floor() as usize).min(n - 1);
        let (x0, x1) = (px(x0, w), px(x1, w));
        let (y0, y1) = (px(y0, h), px(y1, h));
        let color = COLORS[d.class_id % COLORS.len()];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let edge = x < x0 + OUTLINE_PX || x + OUTLINE_PX > x1 || y < y0 + OUTLINE_PX || y + OUTLINE_PX > y1;
                if edge {
                    for (ch, v) in color.iter().enumerate() {
                        data[ch * plane + y * w + x] = *v;
                    }
                }
            }
        }
    }
    Ok(out)
}
