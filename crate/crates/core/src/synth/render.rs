use super::BONES;
use crate::ingest::Keypoints;

pub const DEFAULT_IMAGE_SIZE: usize = 64;

/// Gray level per finger, thumb first; wrist-to-knuckle bones use their
/// finger's level.
const FINGER_LEVEL: [f32; 5] = [1.0, 0.9, 0.8, 0.7, 0.6];

/// Square single-channel image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn blank(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.size + col]
    }
}

/// Stroke radius in pixels.
pub fn stroke_radius(size: usize) -> f64 {
    (size as f64 / 40.0).max(1.0)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Draws the skeleton as anti-aliased strokes on a black background.
///
/// Coverage falls off linearly over one pixel at the stroke edge, so a pixel
/// is lit only if its center lies within `stroke_radius + 0.5` pixels of a
/// bone. Overlapping strokes keep the brighter value.
pub fn render(keypoints: &Keypoints, size: usize) -> Image {
    let mut img = Image::blank(size);
    let r = stroke_radius(size);
    let reach = r + 0.5;
    let s = size as f64;
    for (i, &(ja, jb)) in BONES.iter().enumerate() {
        let level = FINGER_LEVEL[i / 4];
        let a = [keypoints[ja][0] * s, keypoints[ja][1] * s];
        let b = [keypoints[jb][0] * s, keypoints[jb][1] * s];
        let col_lo = ((a[0].min(b[0]) - reach - 0.5).floor().max(0.0)) as usize;
        let col_hi = ((a[0].max(b[0]) + reach - 0.5).ceil().max(0.0) as usize).min(size - 1);
        let row_lo = ((a[1].min(b[1]) - reach - 0.5).floor().max(0.0)) as usize;
        let row_hi = ((a[1].max(b[1]) + reach - 0.5).ceil().max(0.0) as usize).min(size - 1);
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                let cover = (reach - segment_distance(p, a, b)).clamp(0.0, 1.0) as f32;
                if cover > 0.0 {
                    let px = &mut img.pixels[row * size + col];
                    *px = px.max(cover * level);
                }
            }
        }
    }
    img
}
