//! PNG output and raw float dumps (`"H W C\n"` header then little-endian
//! `f64` values in row-major order).

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

fn check_shape(data: &[f64], height: usize, width: usize, channels: usize) -> Result<()> {
    let expected = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::FloatDump("dimensions overflow".into()))?;
    if data.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            actual: data.len(),
        });
    }
    Ok(())
}

/// Quantizes an `H×W×3` image in `[0,1]` to 8-bit RGB and encodes it as PNG.
pub fn encode_png(image: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    check_shape(image, height, width, 3)?;
    let raw: Vec<u8> = image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::ShapeMismatch {
            expected: width * height * 3,
            actual: image.len(),
        })?;
    let mut out = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

pub fn write_png(path: impl AsRef<Path>, image: &[f64], width: usize, height: usize) -> Result<()> {
    let bytes = encode_png(image, width, height)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn encode_float_dump(data: &[f64], height: usize, width: usize, channels: usize) -> Result<Vec<u8>> {
    check_shape(data, height, width, channels)?;
    let mut out = format!("{height} {width} {channels}\n").into_bytes();
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_float_dump(bytes: &[u8]) -> Result<FloatImage> {
    let bad = |m: &str| Error::FloatDump(m.to_string());
    let nl = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| bad("header dimensions must be integers")))
        .collect::<Result<_>>()?;
    let [height, width, channels] = dims[..] else {
        return Err(bad("header must be `H W C`"));
    };
    let count = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let body = &bytes[nl + 1..];
    if Some(body.len()) != count.checked_mul(8) {
        return Err(bad("body length does not match header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FloatImage {
        height,
        width,
        channels,
        data,
    })
}

pub fn write_float_dump(
    path: impl AsRef<Path>,
    data: &[f64],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<()> {
    let bytes = encode_float_dump(data, height, width, channels)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_float_dump(path: impl AsRef<Path>) -> Result<FloatImage> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_float_dump(&bytes)
}
