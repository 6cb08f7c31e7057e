//! Structure renders derived from segmentation labels.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::seed::Rng;

use super::morphology::mask_components;
use super::palette::{render_labels, Palette};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticKind {
    Segmentation,
    Boxes,
    Edges,
    Points,
    Interactive,
}

pub const MARKER_SIDE: usize = 5;
pub const POINT_SIDE: usize = 3;

fn paint_square(labels: &mut [u8], h: usize, w: usize, cy: usize, cx: usize, side: usize, class: u8) {
    let r = side / 2;
    for y in cy.saturating_sub(r)..=(cy + r).min(h - 1) {
        for x in cx.saturating_sub(r)..=(cx + r).min(w - 1) {
            labels[y * w + x] = class;
        }
    }
}

/// Label raster of class boundaries: a labeled pixel is kept when any
/// 4-neighbor, or the image edge, carries a different class.
pub fn edge_labels(mask: &Mask) -> Vec<u8> {
    let (h, w) = mask.dims();
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = mask.get(y, x);
            if c == 0 {
                continue;
            }
            let differs = |ny: i64, nx: i64| {
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    true
                } else {
                    mask.get(ny as usize, nx as usize) != c
                }
            };
            let (yi, xi) = (y as i64, x as i64);
            if differs(yi - 1, xi) || differs(yi + 1, xi) || differs(yi, xi - 1) || differs(yi, xi + 1) {
                out[y * w + x] = c;
            }
        }
    }
    out
}

/// Returns `(in, out)`. Every kind except segmentation needs at least one object.
pub fn semantic_render(sample: &Sample, kind: SemanticKind, palette: &Palette, rng: &mut Rng) -> Result<(Image, Image)> {
    let mask = &sample.mask;
    let (h, w) = mask.dims();
    if kind != SemanticKind::Segmentation && mask.foreground_count() == 0 {
        return Err(Error::SkipInstance(format!("{kind:?} render of an empty mask in {}", sample.sample_id)));
    }
    let input = sample.image.clone();
    let out = match kind {
        SemanticKind::Segmentation => render_labels(mask.data(), h, w, palette),
        SemanticKind::Boxes => {
            let mut labels = vec![0u8; h * w];
            for comp in mask_components(mask) {
                let (y0, x0, y1, x1) = comp.bbox();
                for y in y0..=y1 {
                    labels[y * w + x0..=y * w + x1].fill(comp.class);
                }
            }
            render_labels(&labels, h, w, palette)
        }
        SemanticKind::Edges => render_labels(&edge_labels(mask), h, w, palette),
        SemanticKind::Points => {
            let mut labels = vec![0u8; h * w];
            for comp in mask_components(mask) {
                let (cy, cx) = comp.centroid();
                let cy = (cy.round() as usize).min(h - 1);
                let cx = (cx.round() as usize).min(w - 1);
                paint_square(&mut labels, h, w, cy, cx, POINT_SIDE, comp.class);
            }
            render_labels(&labels, h, w, palette)
        }
        SemanticKind::Interactive => {
            let comps = mask_components(mask);
            let comp = comps.choose(rng).expect("nonempty mask has components");
            let (py, px) = comp.pixels[rng.gen_range(0..comp.pixels.len())];
            let mut marked = input.clone();
            let r = MARKER_SIDE / 2;
            for y in py.saturating_sub(r)..=(py + r).min(h - 1) {
                for x in px.saturating_sub(r)..=(px + r).min(w - 1) {
                    marked.set_pixel(y, x, [1.0; 3]);
                }
            }
            let mut labels = vec![0u8; h * w];
            for &(y, x) in &comp.pixels {
                labels[y * w + x] = comp.class;
            }
            return Ok((marked, render_labels(&labels, h, w, palette)));
        }
    };
    Ok((input, out))
}

/// Recolors exactly `round(fraction * H * W)` distinct pixels, each to a
/// palette color different from its current one.
pub fn noisy_segmentation(seg_out: &Image, fraction: f32, palette: &Palette, rng: &mut Rng) -> Result<Image> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Param(format!("noise fraction must be in [0, 1], got {fraction}")));
    }
    let (h, w) = seg_out.dims();
    let n = h * w;
    let count = ((fraction as f64) * n as f64).round() as usize;
    let mut out = seg_out.clone();
    let colors = palette.colors();
    for i in index::sample(rng, n, count.min(n)) {
        let (y, x) = (i / w, i % w);
        let current = seg_out.pixel(y, x);
        let choices: Vec<&[f32; 3]> = colors.iter().filter(|&&c| c != current).collect();
        out.set_pixel(y, x, **choices.choose(rng).expect("palette has several colors"));
    }
    Ok(out)
}
