//! 8-bit PNG color images and raw `f32` depth maps. Intensities are stored
//! as `value * 255` with no gamma curve.

use std::fs;
use std::path::Path;

use ::image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Row-major RGB image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest 8-bit level, as a PNG roundtrip would.
pub fn quantize(data: &[f64]) -> Vec<f64> {
    data.iter().map(|v| to_u8(*v) as f64 / 255.0).collect()
}

pub fn read_png(path: &Path) -> Result<ColorImage> {
    let img = ::image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(ColorImage {
        width: img.width(),
        height: img.height(),
        data: img.as_raw().iter().map(|b| *b as f64 / 255.0).collect(),
    })
}

pub fn write_png(path: &Path, width: u32, height: u32, data: &[f64]) -> Result<()> {
    if data.len() != (width * height * 3) as usize {
        return Err(Error::invalid(format!("{} values for a {width}x{height} RGB image", data.len())));
    }
    let bytes: Vec<u8> = data.iter().map(|v| to_u8(*v)).collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(width, height, bytes).expect("size checked");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Depth map file: width u32, height u32, then `f32` values, little-endian.
pub fn write_depth(path: &Path, width: u32, height: u32, depth: &[f64]) -> Result<()> {
    if depth.len() != (width * height) as usize {
        return Err(Error::invalid(format!("{} values for a {width}x{height} depth map", depth.len())));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * depth.len());
    bytes.extend_from_slice(&width.to_le_bytes());
    bytes.extend_from_slice(&height.to_le_bytes());
    for d in depth {
        bytes.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Format(format!("{}: truncated depth map", path.display()));
    if bytes.len() < 8 {
        return Err(bad());
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let height = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let n = width as usize * height as usize;
    if bytes.len() != 8 + 4 * n {
        return Err(bad());
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((width, height, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let data = vec![0.0, 0.5, 1.0, 0.2, -1.0, 2.0];
        write_png(&p, 2, 1, &data).unwrap();
        let img = read_png(&p).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, quantize(&data));
        assert_eq!(img.data[4], 0.0);
        assert_eq!(img.data[5], 1.0);
    }

    #[test]
    fn depth_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.depth");
        write_depth(&p, 3, 2, &[1.0, 2.5, 3.0, 0.0, 1e10, 7.25]).unwrap();
        let (w, h, d) = read_depth(&p).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(d, vec![1.0, 2.5, 3.0, 0.0, 1e10f32 as f64, 7.25]);
        fs::write(&p, [0u8; 9]).unwrap();
        assert!(matches!(read_depth(&p), Err(Error::Format(_))));
    }
}
