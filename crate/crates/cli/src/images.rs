//! 8-bit RGB PNG <-> `(3, H, W)` tensors in `[0, 1]`.

use std::path::Path;

use anyhow::{Context, Result};
use fadnet_core::Tensor;
use image::RgbImage;

pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        f64::from(raw[p * 3 + c]) / 255.0
    }))
}

/// Values are rounded to the nearest 1/255; synthetic images are already on that grid.
pub fn write_rgb(path: &Path, t: &Tensor) -> Result<()> {
    let [3, h, w] = *t.shape() else {
        anyhow::bail!("expected a (3, H, W) image, got {:?}", t.shape());
    };
    let data = t.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (data[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).with_context(|| format!("writing image {}", path.display()))
}
