//! Layered synthetic stereo scenes with exact ground truth.
//!
//! A scene is a textured background plane plus a few fronto-parallel boxes,
//! each at a constant disparity. Both views are rendered from the same layer
//! textures, so for integer disparities `right(x - d(x)) == left(x)` holds
//! exactly wherever the left pixel is visible in the right view. Pixels that
//! are occluded or leave the right image are marked invalid.
//!
//! Intensities are multiples of 1/255, so scenes survive 8-bit image files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureMode {
    /// Independent random dots: dense, unambiguous texture.
    Dots,
    /// Overlapping flat-coloured rectangles: weak, piecewise-constant texture.
    Boxes,
}

impl std::str::FromStr for TextureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dots" => Ok(Self::Dots),
            "boxes" => Ok(Self::Boxes),
            other => Err(Error::Config(format!("unknown texture mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub max_disparity: f64,
    pub mode: TextureMode,
    /// Draw real-valued rather than integer disparities.
    pub subpixel: bool,
}

impl SyntheticSpec {
    pub fn new(height: usize, width: usize, max_disparity: f64, mode: TextureMode) -> Self {
        Self { height, width, max_disparity, mode, subpixel: false }
    }
}

/// Rectified pair with dense ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    /// `(3, H, W)` in `[0, 1]`.
    pub left: Tensor,
    pub right: Tensor,
    /// `(1, H, W)` in pixels.
    pub disparity: Tensor,
    /// `(1, H, W)`, 1 where the disparity is observable.
    pub valid: Tensor,
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.left.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.left.shape()[2]
    }
}

struct Layer {
    disparity: f64,
    // Box extent in left-view coordinates; the background covers everything.
    x0: f64,
    x1: f64,
    y0: usize,
    y1: usize,
    // Texture over u in [-margin, width + margin), (3, H, tex_w).
    texture: Vec<f64>,
}

const CHANNELS: usize = 3;

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn random_texture(rng: &mut ChaCha8Rng, h: usize, tex_w: usize, mode: TextureMode) -> Vec<f64> {
    let mut tex = vec![0.0; CHANNELS * h * tex_w];
    match mode {
        TextureMode::Dots => {
            for v in tex.iter_mut() {
                *v = f64::from(rng.gen_range(0u8..=255)) / 255.0;
            }
        }
        TextureMode::Boxes => {
            let base: [f64; CHANNELS] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
            for c in 0..CHANNELS {
                tex[c * h * tex_w..(c + 1) * h * tex_w].fill(quantize(base[c]));
            }
            for _ in 0..(tex_w * h / 24).max(4) {
                let (bw, bh) = (rng.gen_range(2..=tex_w.clamp(3, 10)), rng.gen_range(2..=h.clamp(3, 10)));
                let (x, y) = (rng.gen_range(0..tex_w), rng.gen_range(0..h));
                let color: [f64; CHANNELS] = std::array::from_fn(|_| quantize(rng.gen::<f64>()));
                for c in 0..CHANNELS {
                    for yy in y..(y + bh).min(h) {
                        for xx in x..(x + bw).min(tex_w) {
                            tex[(c * h + yy) * tex_w + xx] = color[c];
                        }
                    }
                }
            }
        }
    }
    tex
}

impl Layer {
    fn covers(&self, u: f64, y: usize) -> bool {
        y >= self.y0 && y < self.y1 && u >= self.x0 && u < self.x1
    }

    /// Texture value at layer coordinate `u` (left-view x), interpolated between texels.
    fn sample(&self, c: usize, y: usize, u: f64, h: usize, tex_w: usize, margin: usize) -> f64 {
        let t = u + margin as f64;
        let i0 = t.floor().clamp(0.0, (tex_w - 1) as f64) as usize;
        let i1 = (i0 + 1).min(tex_w - 1);
        let a = t - t.floor();
        let row = &self.texture[(c * h + y) * tex_w..(c * h + y + 1) * tex_w];
        if a == 0.0 {
            row[i0]
        } else {
            (1.0 - a) * row[i0] + a * row[i1]
        }
    }
}

/// Render one synthetic pair.
pub fn generate_synthetic_pair(seed: u64, spec: &SyntheticSpec) -> Result<StereoSample> {
    let (h, w) = (spec.height, spec.width);
    let max_d = spec.max_disparity;
    if h == 0 || w == 0 {
        return Err(Error::Config("synthetic pair needs non-zero extents".into()));
    }
    if !(max_d >= 0.0 && max_d < w as f64 / 4.0) {
        return Err(Error::Config(format!(
            "max disparity {max_d} must be in [0, width/4 = {})",
            w as f64 / 4.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        if hi <= lo {
            lo
        } else if spec.subpixel {
            rng.gen_range(lo..=hi)
        } else {
            rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
        }
    };

    let margin = max_d.ceil() as usize + 2;
    let tex_w = w + 2 * margin;
    let mut layers = vec![Layer {
        disparity: draw(&mut rng, 0.0, max_d / 2.0),
        x0: f64::NEG_INFINITY,
        x1: f64::INFINITY,
        y0: 0,
        y1: h,
        texture: random_texture(&mut rng, h, tex_w, spec.mode),
    }];
    let boxes = rng.gen_range(1..=3);
    for _ in 0..boxes {
        let bw = rng.gen_range((w / 6).max(1)..=(w / 2).max(1));
        let bh = rng.gen_range((h / 6).max(1)..=(h / 2).max(1));
        let x0 = rng.gen_range(0..=w - bw) as f64;
        let y0 = rng.gen_range(0..=h - bh);
        let floor = layers[0].disparity;
        layers.push(Layer {
            disparity: draw(&mut rng, floor, max_d),
            x0,
            x1: x0 + bw as f64,
            y0,
            y1: y0 + bh,
            texture: random_texture(&mut rng, h, tex_w, spec.mode),
        });
    }
    // Painter's order: farther (smaller disparity) first; ties keep draw order.
    layers.sort_by(|a, b| a.disparity.total_cmp(&b.disparity));

    let top_left = |x: usize, y: usize| -> usize {
        (0..layers.len()).rev().find(|&i| layers[i].covers(x as f64, y)).expect("background covers all")
    };
    // In the right view a layer point at left coordinate u appears at u - d.
    let top_right = |xr: f64, y: usize| -> usize {
        (0..layers.len())
            .rev()
            .find(|&i| layers[i].covers(xr + layers[i].disparity, y))
            .expect("background covers all")
    };

    let hw = h * w;
    let mut left = vec![0.0; CHANNELS * hw];
    let mut right = vec![0.0; CHANNELS * hw];
    let mut disparity = vec![0.0; hw];
    let mut valid = vec![0.0; hw];
    for y in 0..h {
        for x in 0..w {
            let li = top_left(x, y);
            let layer = &layers[li];
            let d = layer.disparity;
            disparity[y * w + x] = d;
            for c in 0..CHANNELS {
                left[c * hw + y * w + x] = layer.sample(c, y, x as f64, h, tex_w, margin);
            }

            let xr = x as f64 - d;
            let visible = xr >= 0.0
                && xr.ceil() <= (w - 1) as f64
                && top_right(xr.floor(), y) == li
                && top_right(xr.ceil(), y) == li;
            valid[y * w + x] = if visible { 1.0 } else { 0.0 };

            let ri = top_right(x as f64, y);
            let u = x as f64 + layers[ri].disparity;
            for c in 0..CHANNELS {
                right[c * hw + y * w + x] = quantize(layers[ri].sample(c, y, u, h, tex_w, margin));
            }
        }
    }
    Ok(StereoSample {
        left: Tensor::new(&[CHANNELS, h, w], left)?,
        right: Tensor::new(&[CHANNELS, h, w], right)?,
        disparity: Tensor::new(&[1, h, w], disparity)?,
        valid: Tensor::new(&[1, h, w], valid)?,
    })
}

/// `count` pairs with seeds `seed, seed + 1, ...`.
pub fn generate_dataset(seed: u64, count: usize, spec: &SyntheticSpec) -> Result<Vec<StereoSample>> {
    (0..count as u64).map(|i| generate_synthetic_pair(seed.wrapping_add(i), spec)).collect()
}
