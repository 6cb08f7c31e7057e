//! Geometric transforms. Positive angles rotate counter-clockwise as displayed.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometric {
    Rotate(f32),
    HFlip,
    VFlip,
    Zoom(f32),
}

pub fn geometric_transform(image: &Image, kind: Geometric) -> Result<Image> {
    match kind {
        Geometric::Rotate(deg) => Ok(rotate(image, deg)),
        Geometric::HFlip => Ok(hflip(image)),
        Geometric::VFlip => Ok(vflip(image)),
        Geometric::Zoom(f) => zoom(image, f),
    }
}

pub fn hflip(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(y, x, image.pixel(y, w - 1 - x));
        }
    }
    out
}

pub fn vflip(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(y, x, image.pixel(h - 1 - y, x));
        }
    }
    out
}

/// Rotation about the image center. Multiples of 90 degrees are exact index
/// permutations (quarter turns only on square images); everything else is
/// bilinear with black outside the frame.
pub fn rotate(image: &Image, degrees: f32) -> Image {
    let d = degrees.rem_euclid(360.0);
    let quarter = (d / 90.0).round();
    if (d - quarter * 90.0).abs() == 0.0 {
        let turns = quarter as u32 % 4;
        if turns == 0 {
            return image.clone();
        }
        if turns == 2 {
            return rotate180(image);
        }
        if image.height() == image.width() {
            return if turns == 1 {
                rotate90(image)
            } else {
                rotate90(&rotate180(image))
            };
        }
    }
    rotate_bilinear(image, degrees)
}

fn rotate90(image: &Image) -> Image {
    let n = image.width();
    let mut out = Image::new(n, n);
    for y in 0..n {
        for x in 0..n {
            out.set_pixel(y, x, image.pixel(x, n - 1 - y));
        }
    }
    out
}

fn rotate180(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(y, x, image.pixel(h - 1 - y, w - 1 - x));
        }
    }
    out
}

/// Bilinear sample with zero outside the frame.
#[inline]
pub(crate) fn sample_bilinear(image: &Image, sy: f32, sx: f32) -> [f32; 3] {
    let (h, w) = image.dims();
    let y0 = sy.floor();
    let x0 = sx.floor();
    let wy = sy - y0;
    let wx = sx - x0;
    let mut acc = [0.0f32; 3];
    for (dy, fy) in [(0, 1.0 - wy), (1, wy)] {
        for (dx, fx) in [(0, 1.0 - wx), (1, wx)] {
            let yy = y0 as i64 + dy;
            let xx = x0 as i64 + dx;
            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                continue;
            }
            let p = image.pixel(yy as usize, xx as usize);
            let f = fy * fx;
            for c in 0..3 {
                acc[c] += f * p[c];
            }
        }
    }
    acc
}

fn rotate_bilinear(image: &Image, degrees: f32) -> Image {
    let (h, w) = image.dims();
    let (s, c) = (degrees as f64).to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + c * dx - s * dy;
            let sy = cy + s * dx + c * dy;
            // Snap coordinates that land on the pixel grid up to rounding noise.
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            let p = sample_bilinear(image, snap(sy) as f32, snap(sx) as f32);
            out.set_pixel(y, x, p.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    out
}

/// Center crop of `side / factor` upscaled back to the original size.
pub fn zoom(image: &Image, factor: f32) -> Result<Image> {
    if !factor.is_finite() || factor < 1.0 {
        return Err(Error::Param(format!("zoom factor must be >= 1, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let (h, w) = image.dims();
    let ch = h as f32 / factor;
    let cw = w as f32 / factor;
    let top = (h as f32 - ch) / 2.0;
    let left = (w as f32 - cw) / 2.0;
    let mut out = Image::new(h, w);
    for y in 0..h {
        let sy = (top + (y as f32 + 0.5) * ch / h as f32 - 0.5).clamp(0.0, (h - 1) as f32);
        for x in 0..w {
            let sx = (left + (x as f32 + 0.5) * cw / w as f32 - 0.5).clamp(0.0, (w - 1) as f32);
            out.set_pixel(y, x, sample_bilinear(image, sy, sx).map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}
