//! Geometric + photometric augmentation with keypoint co-transformation.
//!
//! The geometric part is an affine map on crop coordinates (y down):
//! scale and rotate about the crop center `(0.5, 0.5)`, then translate.
//! A positive rotation turns `+x` toward `+y`, i.e. clockwise on screen.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::Keypoints;

const CENTER: [f64; 2] = [0.5, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation: f64,
    pub scale: f64,
    pub translation: [f64; 2],
    pub gain: f64,
    pub offset: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        rotation: 0.0,
        scale: 1.0,
        translation: [0.0, 0.0],
        gain: 1.0,
        offset: 0.0,
    };

    /// Row-major 2x3 matrix `[A | b]` with `p' = A p + b`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let a = [[self.scale * c, -self.scale * s], [self.scale * s, self.scale * c]];
        let b = [
            CENTER[0] - (a[0][0] * CENTER[0] + a[0][1] * CENTER[1]) + self.translation[0],
            CENTER[1] - (a[1][0] * CENTER[0] + a[1][1] * CENTER[1]) + self.translation[1],
        ];
        [[a[0][0], a[0][1], b[0]], [a[1][0], a[1][1], b[1]]]
    }

    pub fn map_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let d = [p[0] - CENTER[0], p[1] - CENTER[1]];
        [
            CENTER[0] + self.scale * (c * d[0] - s * d[1]) + self.translation[0],
            CENTER[1] + self.scale * (s * d[0] + c * d[1]) + self.translation[1],
        ]
    }

    pub fn unmap_point(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let d = [
            (q[0] - CENTER[0] - self.translation[0]) / self.scale,
            (q[1] - CENTER[1] - self.translation[1]) / self.scale,
        ];
        [CENTER[0] + c * d[0] + s * d[1], CENTER[1] - s * d[0] + c * d[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    /// Rotation drawn from `[-rotation, rotation]`.
    pub rotation: f64,
    pub scale: (f64, f64),
    /// Each translation component drawn from `[-translation, translation]`.
    pub translation: f64,
    pub gain: (f64, f64),
    /// Offset drawn from `[-offset, offset]`.
    pub offset: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            rotation: FRAC_PI_2,
            scale: (0.8, 1.2),
            translation: 0.1,
            gain: (0.8, 1.2),
            offset: 0.1,
        }
    }
}

fn symmetric<R: Rng>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn between<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        Self {
            rotation: 0.0,
            scale: (1.0, 1.0),
            translation: 0.0,
            gain: (1.0, 1.0),
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.rotation >= 0.0
            && self.translation >= 0.0
            && self.offset >= 0.0
            && self.scale.0 > 0.0
            && self.scale.1 >= self.scale.0
            && self.gain.0 > 0.0
            && self.gain.1 >= self.gain.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid augmentation ranges {self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> AugmentParams {
        AugmentParams {
            rotation: symmetric(rng, self.rotation),
            scale: between(rng, self.scale),
            translation: [symmetric(rng, self.translation), symmetric(rng, self.translation)],
            gain: between(rng, self.gain),
            offset: symmetric(rng, self.offset),
        }
    }
}

fn bilinear(src: &[f32], size: usize, x: f64, y: f64) -> f64 {
    // pixel (row, col) has its center at (col + 0.5, row + 0.5)
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= size as f64 || c >= size as f64 {
            0.0
        } else {
            src[r as usize * size + c as usize] as f64
        }
    };
    (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1.0))
        + ty * ((1.0 - tx) * at(y0 + 1.0, x0) + tx * at(y0 + 1.0, x0 + 1.0))
}

/// Warps a square image and maps its keypoints with the same affine map.
/// Gain and offset apply to pixels only, clamped to `[0, 1]`.
pub fn apply_augment(image: &[f32], size: usize, keypoints: &Keypoints, params: &AugmentParams) -> (Vec<f64>, Keypoints) {
    let s = size as f64;
    let mut out = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let q = [(col as f64 + 0.5) / s, (row as f64 + 0.5) / s];
            let p = params.unmap_point(q);
            let v = bilinear(image, size, p[0] * s, p[1] * s);
            out[row * size + col] = (params.gain * v + params.offset).clamp(0.0, 1.0);
        }
    }
    let mut kps = *keypoints;
    for k in kps.iter_mut() {
        *k = params.map_point(*k);
    }
    (out, kps)
}
