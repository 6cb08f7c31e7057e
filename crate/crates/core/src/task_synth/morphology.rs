//! Label-raster geometry: connected components, the exact Euclidean distance
//! transform, Zhang-Suen thinning, convex hulls and raster-scan geodesic
//! distances.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

use super::palette::{render_labels, Palette};

const NEIGHBORS8: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// An 8-connected region of a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub class: u8,
    /// Pixel coordinates `(y, x)` in scan order.
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sy, sx) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(y, x)| (a + y as f64, b + x as f64));
        (sy / n, sx / n)
    }

    /// The member pixel closest to the centroid (the rounded centroid when it
    /// lies inside the component).
    pub fn anchor(&self) -> (usize, usize) {
        let (cy, cx) = self.centroid();
        let (ry, rx) = (cy.round() as usize, cx.round() as usize);
        if self.pixels.contains(&(ry, rx)) {
            return (ry, rx);
        }
        *self
            .pixels
            .iter()
            .min_by(|a, b| {
                let da = (a.0 as f64 - cy).powi(2) + (a.1 as f64 - cx).powi(2);
                let db = (b.0 as f64 - cy).powi(2) + (b.1 as f64 - cx).powi(2);
                da.total_cmp(&db)
            })
            .expect("components are nonempty")
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold(
            (usize::MAX, usize::MAX, 0, 0),
            |(y0, x0, y1, x1), &(y, x)| (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
        )
    }
}

fn neighbors8(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBORS8.iter().filter_map(move |&(dy, dx)| {
        let ny = y as i64 + dy;
        let nx = x as i64 + dx;
        (ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64).then_some((ny as usize, nx as usize))
    })
}

/// 8-connected components of equal nonzero labels, ordered by first pixel in scan order.
pub fn components(labels: &[u8], height: usize, width: usize) -> Vec<Component> {
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        let class = labels[start];
        if class == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (y, x) = (i / width, i % width);
            pixels.push((y, x));
            for (ny, nx) in neighbors8(y, x, height, width) {
                let j = ny * width + nx;
                if !seen[j] && labels[j] == class {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        pixels.sort_unstable();
        out.push(Component { class, pixels });
    }
    out
}

pub fn mask_components(mask: &Mask) -> Vec<Component> {
    components(mask.data(), mask.height(), mask.width())
}

/// 1D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    // Skip leading infinite sites.
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(p) => p,
        None => {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let intersect = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
        // z[0] is -inf, so k never underflows.
        let mut s = intersect(v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest `true` pixel.
/// Returns `None` when there is no such pixel.
pub fn euclidean_distance(foreground: &[bool], height: usize, width: usize) -> Option<Vec<f64>> {
    if !foreground.iter().any(|&b| b) {
        return None;
    }
    let n = height.max(width);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut col_in = vec![0.0f64; height];
    let mut col_out = vec![0.0f64; height];
    let mut grid = vec![0.0f64; height * width];
    for x in 0..width {
        for y in 0..height {
            col_in[y] = if foreground[y * width + x] { 0.0 } else { f64::INFINITY };
        }
        edt_1d(&col_in, &mut col_out, &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0f64; width];
    for y in 0..height {
        let row = &grid[y * width..(y + 1) * width].to_vec();
        edt_1d(row, &mut row_out, &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    Some(grid.into_iter().map(f64::sqrt).collect())
}

fn image_diagonal(height: usize, width: usize) -> f64 {
    ((height * height + width * width) as f64).sqrt()
}

/// Distance map of the foreground normalized by the image diagonal.
pub fn distance_map(mask: &Mask) -> Result<Image> {
    let (h, w) = mask.dims();
    let fg: Vec<bool> = mask.data().iter().map(|&c| c != 0).collect();
    let dist = euclidean_distance(&fg, h, w).ok_or_else(|| Error::SkipInstance("distance map of an empty mask".into()))?;
    let diag = image_diagonal(h, w);
    let plane: Vec<f32> = dist.iter().map(|&d| (d / diag).clamp(0.0, 1.0) as f32).collect();
    Image::from_gray(h, w, &plane)
}

/// Zhang-Suen thinning of a binary raster. Components that thinning would
/// erase completely (2x2 blocks) keep the pixel closest to their centroid.
pub fn zhang_suen(binary: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut img = binary.to_vec();
    let at = |img: &[bool], y: i64, x: i64| -> u8 {
        if y < 0 || x < 0 || y >= height as i64 || x >= width as i64 {
            0
        } else {
            img[y as usize * width + x as usize] as u8
        }
    };
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            to_clear.clear();
            for y in 0..height as i64 {
                for x in 0..width as i64 {
                    if at(&img, y, x) == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, y - 1, x),
                        at(&img, y - 1, x + 1),
                        at(&img, y, x + 1),
                        at(&img, y + 1, x + 1),
                        at(&img, y + 1, x),
                        at(&img, y + 1, x - 1),
                        at(&img, y, x - 1),
                        at(&img, y - 1, x - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if step == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if ok {
                        to_clear.push(y as usize * width + x as usize);
                    }
                }
            }
            if !to_clear.is_empty() {
                changed = true;
                for &i in &to_clear {
                    img[i] = false;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let labels: Vec<u8> = binary.iter().map(|&b| b as u8).collect();
    for comp in components(&labels, height, width) {
        if comp.pixels.iter().all(|&(y, x)| !img[y * width + x]) {
            let (y, x) = comp.anchor();
            img[y * width + x] = true;
        }
    }
    img
}

fn classes_present(mask: &Mask) -> Vec<u8> {
    let mut present = [false; 256];
    for &c in mask.data() {
        present[c as usize] = true;
    }
    (1..=255u8).filter(|&c| present[c as usize]).collect()
}

fn require_foreground(mask: &Mask, what: &str) -> Result<()> {
    if mask.foreground_count() == 0 {
        Err(Error::SkipInstance(format!("{what} of an empty mask")))
    } else {
        Ok(())
    }
}

/// Per-class skeletons painted in class colors on black.
pub fn skeleton(mask: &Mask, palette: &Palette) -> Result<Image> {
    require_foreground(mask, "skeleton")?;
    let (h, w) = mask.dims();
    let mut labels = vec![0u8; h * w];
    for class in classes_present(mask) {
        let binary: Vec<bool> = mask.data().iter().map(|&c| c == class).collect();
        for (i, keep) in zhang_suen(&binary, h, w).into_iter().enumerate() {
            if keep {
                labels[i] = class;
            }
        }
    }
    Ok(render_labels(&labels, h, w, palette))
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of points (monotone chain), counter-clockwise without collinear points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_hull(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -1e-9)
}

/// Filled convex hull of each class, drawn in ascending class order.
pub fn semantic_hulls(mask: &Mask, palette: &Palette) -> Result<Image> {
    require_foreground(mask, "hull")?;
    let (h, w) = mask.dims();
    let mut labels = vec![0u8; h * w];
    for class in classes_present(mask) {
        let pts: Vec<(f64, f64)> = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| ((i / w) as f64, (i % w) as f64))
            .collect();
        let hull = convex_hull(&pts);
        let (mut y0, mut x0, mut y1, mut x1) = (h, w, 0, 0);
        for &(y, x) in &pts {
            y0 = y0.min(y as usize);
            x0 = x0.min(x as usize);
            y1 = y1.max(y as usize);
            x1 = x1.max(x as usize);
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                if mask.get(y, x) == class || inside_hull(&hull, (y as f64, x as f64)) {
                    labels[y * w + x] = class;
                }
            }
        }
    }
    Ok(render_labels(&labels, h, w, palette))
}

/// Raster-scan geodesic distance from `seeds`. Each step between 8-neighbors
/// costs `(1 - lambda) * length + lambda * |I(p) - I(q)|`. `passes` counts
/// forward/backward sweep pairs.
pub fn geodesic_distance(
    intensity: &[f32],
    height: usize,
    width: usize,
    seeds: &[(usize, usize)],
    lambda: f64,
    passes: usize,
) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; height * width];
    for &(y, x) in seeds {
        d[y * width + x] = 0.0;
    }
    let diag = std::f64::consts::SQRT_2;
    let fwd: [(i64, i64, f64); 4] = [(-1, -1, diag), (-1, 0, 1.0), (-1, 1, diag), (0, -1, 1.0)];
    let relax = |d: &mut [f64], y: usize, x: usize, offsets: &[(i64, i64, f64); 4]| {
        let i = y * width + x;
        let here = intensity[i] as f64;
        let mut best = d[i];
        for &(dy, dx, len) in offsets {
            let ny = y as i64 + dy;
            let nx = x as i64 + dx;
            if ny < 0 || nx < 0 || ny >= height as i64 || nx >= width as i64 {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            let cost = (1.0 - lambda) * len + lambda * (here - intensity[j] as f64).abs();
            best = best.min(d[j] + cost);
        }
        d[i] = best;
    };
    let bwd = fwd.map(|(dy, dx, l)| (-dy, -dx, l));
    for _ in 0..passes {
        for y in 0..height {
            for x in 0..width {
                relax(&mut d, y, x, &fwd);
            }
        }
        for y in (0..height).rev() {
            for x in (0..width).rev() {
                relax(&mut d, y, x, &bwd);
            }
        }
    }
    d
}

/// Geodesic distance on image luminance from component anchors, normalized to `[0, 1]`.
pub fn geodesic_map(image: &Image, mask: &Mask, lambda: f64) -> Result<Image> {
    require_foreground(mask, "geodesic map")?;
    let (h, w) = mask.dims();
    let seeds: Vec<(usize, usize)> = mask_components(mask).iter().map(Component::anchor).collect();
    let dist = geodesic_distance(&image.luminance(), h, w, &seeds, lambda, 2);
    let max = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
    let plane: Vec<f32> = dist
        .iter()
        .map(|&d| if max > 0.0 { (d / max).clamp(0.0, 1.0) as f32 } else { 0.0 })
        .collect();
    Image::from_gray(h, w, &plane)
}
