//! KITTI-style 16-bit grayscale PNG disparities: `disparity = stored / 256`, 0 = invalid.

use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use super::DisparityMap;
use crate::error::{Error, Result};

pub fn read_kitti_png(bytes: &[u8]) -> Result<DisparityMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(0, format!("PNG decode failed: {e}")))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::format(0, format!("expected 16-bit grayscale, got {:?}", img.color())));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let values = raw.iter().map(|&s| f32::from(s) / 256.0).collect();
    let valid = raw.iter().map(|&s| s != 0).collect();
    DisparityMap::new(w, h, values, valid)
}

/// Stored value for one disparity, rounded half up; `None` when it falls outside `1..=65535`.
pub fn encode_kitti(d: f32) -> Option<u16> {
    let s = (f64::from(d) * 256.0 + 0.5).floor();
    (1.0..=65535.0).contains(&s).then_some(s as u16)
}

/// Invalid pixels are written as 0. Valid disparities must encode to `1..=65535`.
pub fn write_kitti_png(map: &DisparityMap) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(map.values.len());
    for (i, (&v, &ok)) in map.values.iter().zip(&map.valid).enumerate() {
        if !ok {
            raw.push(0);
            continue;
        }
        match encode_kitti(v) {
            Some(s) => raw.push(s),
            None => {
                return Err(Error::Contract(format!(
                    "disparity {v} at pixel {i} is not representable in 16-bit KITTI encoding"
                )))
            }
        }
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, raw).expect("length checked by DisparityMap");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(out.into_inner())
}
