use crate::image::Image;

/// Class colors. Entry 0 is background black; every entry is an exact 8-bit
/// color so renders survive PNG round trips.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    colors: Vec<[f32; 3]>,
}

const CLASS_COLORS: [[u8; 3]; 20] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
];

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: CLASS_COLORS
                .iter()
                .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
                .collect(),
        }
    }
}

impl Palette {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[[f32; 3]] {
        &self.colors
    }

    /// Color of a class id. Ids beyond the palette wrap over the non-background entries.
    pub fn color(&self, class: u8) -> [f32; 3] {
        if class == 0 {
            self.colors[0]
        } else {
            self.colors[1 + (class as usize - 1) % (self.colors.len() - 1)]
        }
    }
}

/// 256-entry perceptually ordered color map (polynomial fit of viridis).
pub fn false_color_lut() -> &'static [[f32; 3]; 256] {
    use std::sync::OnceLock;
    static LUT: OnceLock<[[f32; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        const C: [[f64; 3]; 7] = [
            [0.277_727_327_223_417_7, 0.005_407_344_544_966_578, 0.334_099_805_335_306_1],
            [0.105_093_043_108_577_4, 1.404_613_529_898_575, 1.384_590_162_594_685],
            [-0.330_861_828_725_556_3, 0.214_847_559_468_213, 0.095_095_163_028_236_59],
            [-4.634_230_498_983_486, -5.799_100_973_351_585, -19.332_440_956_279_87],
            [6.228_269_936_347_081, 14.179_933_366_805_09, 56.690_552_600_681_05],
            [4.776_384_997_670_288, -13.745_145_377_746_01, -65.353_032_633_372_34],
            [-5.435_455_855_934_631, 4.645_852_612_178_535, 26.312_435_249_583_2],
        ];
        let mut lut = [[0.0f32; 3]; 256];
        for (i, entry) in lut.iter_mut().enumerate() {
            let t = i as f64 / 255.0;
            for (ch, v) in entry.iter_mut().enumerate() {
                let poly = C.iter().rev().fold(0.0, |acc, c| acc * t + c[ch]);
                *v = poly.clamp(0.0, 1.0) as f32;
            }
        }
        lut
    })
}

/// Paints a label raster with palette colors.
pub fn render_labels(labels: &[u8], height: usize, width: usize, palette: &Palette) -> Image {
    let data = labels.iter().flat_map(|&c| palette.color(c)).collect();
    Image::from_vec(height, width, data).expect("label raster matches dimensions")
}
