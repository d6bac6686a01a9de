//! Recurrent-feature aware visualization: a layer's feature maps are
//! quantized to 8 bits on a shared scale and each pixel takes the most
//! frequent value across the depth.

use std::path::Path;

use crate::dataio::{encode_pgm, save_pgm};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Scalar, Tensor};

const BINS: usize = 256;

/// `depth × height × width` stack of 8-bit levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedStack {
    pub layer: String,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

impl QuantizedStack {
    pub fn new(layer: impl Into<String>, depth: usize, height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 || values.len() != depth * height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![depth, height, width],
                actual: vec![values.len()],
            });
        }
        Ok(QuantizedStack {
            layer: layer.into(),
            depth,
            height,
            width,
            values,
        })
    }

    pub fn map(&self, k: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.values[k * plane..(k + 1) * plane]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfavImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RfavImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.width, self.height, &self.pixels).expect("extents match pixel count")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_pgm(self.width, self.height, &self.pixels, path)
    }
}

/// Maps a `d × h × w` feature stack onto 0..=255 using the minimum and
/// maximum of the whole stack. A constant stack maps to zeros.
pub fn quantize_maps<T: Scalar>(features: &Tensor<T>, layer: &str) -> Result<QuantizedStack> {
    let (b, d, h, w) = features.dims4()?;
    if b != 1 {
        return Err(Error::InvalidArgument(format!(
            "quantize one feature stack at a time, got a batch of {b}"
        )));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("feature stack"));
    }
    let (min, max) = features
        .data()
        .iter()
        .map(|v| v.as_f64())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let values = if max > min {
        let scale = 255.0 / (max - min);
        features
            .data()
            .iter()
            .map(|v| ((v.as_f64() - min) * scale).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; features.len()]
    };
    QuantizedStack::new(layer, d, h, w, values)
}

/// Per pixel, the level occurring most often across the depth; ties go to
/// the smallest level.
pub fn rfav(stack: &QuantizedStack) -> RfavImage {
    let plane = stack.height * stack.width;
    let mut hist = [0u32; BINS];
    let pixels = (0..plane)
        .map(|p| {
            for k in 0..stack.depth {
                hist[stack.values[k * plane + p] as usize] += 1;
            }
            let mut best = 0usize;
            for z in 1..BINS {
                if hist[z] > hist[best] {
                    best = z;
                }
            }
            for k in 0..stack.depth {
                hist[stack.values[k * plane + p] as usize] = 0;
            }
            best as u8
        })
        .collect();
    RfavImage {
        height: stack.height,
        width: stack.width,
        pixels,
    }
}

/// Runs `image` through `net` and visualizes the named layer's output.
pub fn rfav_layer<T: Scalar>(net: &Network<T>, image: &Tensor<T>, layer: &str) -> Result<RfavImage> {
    let features = net.feature_map(image, layer)?;
    Ok(rfav(&quantize_maps(&features, layer)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[u8]) -> QuantizedStack {
        QuantizedStack::new("t", values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn majority_and_tie_break() {
        assert_eq!(rfav(&column(&[5, 5, 200])).pixels, vec![5]);
        assert_eq!(rfav(&column(&[7, 3])).pixels, vec![3]);
        assert_eq!(rfav(&column(&[255])).pixels, vec![255]);
    }

    #[test]
    fn quantization_endpoints() {
        let t = Tensor::from_vec(&[2, 1, 1], vec![0.0f32, 1.0]).unwrap();
        assert_eq!(quantize_maps(&t, "x").unwrap().values, vec![0, 255]);
        let c = Tensor::full(&[3, 2, 2], 4.5f32);
        assert!(quantize_maps(&c, "x").unwrap().values.iter().all(|&v| v == 0));
        let grid = Tensor::from_vec(&[1, 16, 16], (0..256).map(|v| v as f64).collect()).unwrap();
        let q = quantize_maps(&grid, "x").unwrap();
        assert!(q.values.iter().enumerate().all(|(i, &v)| v as usize == i));
    }

    #[test]
    fn nan_rejected() {
        let t = Tensor::from_vec(&[1, 1, 2], vec![0.0f32, f32::NAN]).unwrap();
        assert!(quantize_maps(&t, "x").is_err());
    }

    #[test]
    fn pgm_header() {
        let img = rfav(&QuantizedStack::new("t", 1, 2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap());
        assert_eq!(img.to_pgm(), b"P5\n3 2\n255\n\x01\x02\x03\x04\x05\x06");
    }
}
