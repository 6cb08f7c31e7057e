//! Lossy degradations used as inputs of the generative tasks.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Degradation {
    Gaussian(f32),
    SaltPepper(f32),
    Downsample(usize),
    Erase(Vec<Rect>),
    NoiseFill,
    BorderErase(f32),
}

pub const ERASE_FILL: f32 = 0.5;

pub fn degrade(image: &Image, kind: &Degradation, rng: &mut Rng) -> Result<Image> {
    let (h, w) = image.dims();
    match *kind {
        Degradation::Gaussian(sigma) => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Param(format!("gaussian sigma must be positive, got {sigma}")));
            }
            let normal = Normal::new(0.0f32, sigma).map_err(|e| Error::Param(e.to_string()))?;
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
            Ok(out)
        }
        Degradation::SaltPepper(p) => {
            if !(p > 0.0 && p <= 0.5) {
                return Err(Error::Param(format!("salt-and-pepper probability must be in (0, 0.5], got {p}")));
            }
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    let u: f32 = rng.gen();
                    if u < p / 2.0 {
                        out.set_pixel(y, x, [0.0; 3]);
                    } else if u < p {
                        out.set_pixel(y, x, [1.0; 3]);
                    }
                }
            }
            Ok(out)
        }
        Degradation::Downsample(s) => {
            if ![2, 4, 8].contains(&s) {
                return Err(Error::Param(format!("downsample factor must be 2, 4 or 8, got {s}")));
            }
            Ok(block_average(image, s))
        }
        Degradation::Erase(ref rects) => {
            let mut out = image.clone();
            for r in rects {
                if r.height == 0 || r.width == 0 || r.y + r.height > h || r.x + r.width > w {
                    return Err(Error::Param(format!("rectangle {r:?} outside a {h}x{w} image")));
                }
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        out.set_pixel(y, x, [ERASE_FILL; 3]);
                    }
                }
            }
            Ok(out)
        }
        Degradation::NoiseFill => {
            let data = (0..h * w * 3).map(|_| rng.gen::<f32>()).collect();
            Image::from_vec(h, w, data)
        }
        Degradation::BorderErase(keep) => {
            if !(keep > 0.0 && keep < 1.0) {
                return Err(Error::Param(format!("keep fraction must be in (0, 1), got {keep}")));
            }
            let kh = ((h as f32 * keep).round() as usize).max(1);
            let kw = ((w as f32 * keep).round() as usize).max(1);
            let top = (h - kh) / 2;
            let left = (w - kw) / 2;
            let mut out = Image::filled(h, w, ERASE_FILL);
            for y in top..top + kh {
                for x in left..left + kw {
                    out.set_pixel(y, x, image.pixel(y, x));
                }
            }
            Ok(out)
        }
    }
}

/// Box downsample by `s` followed by nearest-neighbor upsampling; blocks at
/// the right and bottom edges may be partial.
fn block_average(image: &Image, s: usize) -> Image {
    let (h, w) = image.dims();
    let mut out = Image::new(h, w);
    for by in (0..h).step_by(s) {
        for bx in (0..w).step_by(s) {
            let y1 = (by + s).min(h);
            let x1 = (bx + s).min(w);
            let mut acc = [0.0f64; 3];
            for y in by..y1 {
                for x in bx..x1 {
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            let n = ((y1 - by) * (x1 - bx)) as f64;
            let mean = acc.map(|a| (a / n) as f32);
            for y in by..y1 {
                for x in bx..x1 {
                    out.set_pixel(y, x, mean);
                }
            }
        }
    }
    out
}
