use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &str) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::ImageMagic(String::from_utf8_lossy(bytes).into_owned()));
    }
    let found = String::from_utf8_lossy(&bytes[..2]).into_owned();
    if found != magic {
        return Err(match found.as_str() {
            "P1" | "P2" | "P3" | "P4" | "P5" | "P6" | "P7" => Error::UnsupportedFormat(format!(
                "netpbm variant {found}, only binary {magic} is read here"
            )),
            _ => Error::ImageMagic(found),
        });
    }
    let mut pos = 2;
    let mut values = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].into_iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::ImageHeader(format!("missing {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        values[k] = text
            .parse()
            .map_err(|_| Error::ImageHeader(format!("{name} {text} too large")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::ImageHeader("no whitespace after maxval".into()));
    }
    let [width, height, maxval] = values;
    if width == 0 || height == 0 {
        return Err(Error::ImageHeader(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, only 255 is supported")));
    }
    Ok(Header {
        width,
        height,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let expected = header.width * header.height * channels;
    let data = &bytes[header.data_start.min(bytes.len())..];
    if data.len() < expected {
        return Err(Error::ImageTruncated {
            expected,
            actual: data.len(),
        });
    }
    Ok(&data[..expected])
}

/// Binary PPM to a channel-planar `3 × h × w` tensor with values `v / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let header = parse_header(bytes, "P6")?;
    let data = payload(bytes, &header, 3)?;
    let plane = header.width * header.height;
    let mut out = vec![0.0f32; 3 * plane];
    for (p, rgb) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = rgb[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, header.height, header.width], out)
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `3 × h × w` tensor, clamping to [0, 1] and rounding to 8 bits.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        [1, c, h, w] => (c, h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                expected: vec![3, 0, 0],
                actual: image.shape().to_vec(),
            })
        }
    };
    if c != 3 {
        return Err(Error::ChannelMismatch { expected: 3, actual: c });
    }
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let d = image.data();
    for p in 0..plane {
        for ch in 0..3 {
            out.push(to_byte(d[ch * plane + p]));
        }
    }
    Ok(out)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

/// 8-bit binary PGM from row-major pixels.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || pixels.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: vec![height, width],
            actual: vec![pixels.len()],
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// `(width, height, pixels)` of a binary PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header = parse_header(bytes, "P5")?;
    let data = payload(bytes, &header, 1)?;
    Ok((header.width, header.height, data.to_vec()))
}

pub fn save_pgm(width: usize, height: usize, pixels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(width, height, pixels)?).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    decode_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
