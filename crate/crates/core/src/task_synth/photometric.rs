use crate::error::{Error, Result};
use crate::image::Image;

use super::palette::false_color_lut;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Photometric {
    Brightness(f32),
    Contrast(f32),
    Invert,
    FalseColor,
    ToGrayscale,
}

pub fn photometric_transform(image: &Image, kind: Photometric) -> Result<Image> {
    match kind {
        Photometric::Brightness(f) => {
            check_factor(f)?;
            Ok(image.map(|v| (f * v).clamp(0.0, 1.0)))
        }
        Photometric::Contrast(f) => {
            check_factor(f)?;
            let mean = image.mean();
            Ok(image.map(|v| (mean + f * (v - mean)).clamp(0.0, 1.0)))
        }
        Photometric::Invert => Ok(image.map(|v| 1.0 - v)),
        Photometric::FalseColor => {
            let lut = false_color_lut();
            let (h, w) = image.dims();
            let data = image
                .luminance()
                .into_iter()
                .flat_map(|l| lut[(l.clamp(0.0, 1.0) * 255.0).round() as usize])
                .collect();
            Image::from_vec(h, w, data)
        }
        Photometric::ToGrayscale => {
            let (h, w) = image.dims();
            let luma: Vec<f32> = image.luminance().into_iter().map(|l| l.clamp(0.0, 1.0)).collect();
            Image::from_gray(h, w, &luma)
        }
    }
}

fn check_factor(f: f32) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("photometric factor must be positive, got {f}")))
    }
}
