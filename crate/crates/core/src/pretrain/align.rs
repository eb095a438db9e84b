//! Inverse geometric alignment of projected features.
//!
//! A feature vector of even length `P` is read as `P / 2` points in the
//! plane. Undoing the augmentation's scale and rotation and then removing
//! the point-set centroid brings anchors and positives into a common frame.

use super::AugmentParams;
use crate::error::{Error, Result};

fn check_even(p: usize) -> Result<()> {
    if p % 2 != 0 || p == 0 {
        return Err(Error::param(format!("feature length {p} must be even and positive")));
    }
    Ok(())
}

fn center(points: &mut [f64]) {
    let m = (points.len() / 2) as f64;
    let (sx, sy) = points
        .chunks_exact(2)
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    let (mx, my) = (sx / m, sy / m);
    for p in points.chunks_exact_mut(2) {
        p[0] -= mx;
        p[1] -= my;
    }
}

/// `center(R(-theta) z / s)` on the 2D point view of `features`.
pub fn inverse_align(features: &[f64], params: &AugmentParams) -> Result<Vec<f64>> {
    check_even(features.len())?;
    let (s, c) = params.rotation.sin_cos();
    let inv = 1.0 / params.scale;
    let mut out = Vec::with_capacity(features.len());
    for p in features.chunks_exact(2) {
        out.push(inv * (c * p[0] + s * p[1]));
        out.push(inv * (-s * p[0] + c * p[1]));
    }
    center(&mut out);
    Ok(out)
}

/// Gradient of [`inverse_align`] pulled back to its input.
///
/// The map is linear; centering is a symmetric projection, so the adjoint
/// centers first and then applies `R(theta) / s`.
pub fn inverse_align_backward(grad: &[f64], params: &AugmentParams) -> Result<Vec<f64>> {
    check_even(grad.len())?;
    let mut g = grad.to_vec();
    center(&mut g);
    let (s, c) = params.rotation.sin_cos();
    let inv = 1.0 / params.scale;
    for p in g.chunks_exact_mut(2) {
        let (x, y) = (p[0], p[1]);
        p[0] = inv * (c * x - s * y);
        p[1] = inv * (s * x + c * y);
    }
    Ok(g)
}

/// The geometric part of the augmentation applied to a point set, about
/// the origin: `s R(theta) z + t`.
pub fn forward_points(features: &[f64], params: &AugmentParams) -> Vec<f64> {
    let (s, c) = params.rotation.sin_cos();
    let mut out = Vec::with_capacity(features.len());
    for p in features.chunks_exact(2) {
        out.push(params.scale * (c * p[0] - s * p[1]) + params.translation[0]);
        out.push(params.scale * (s * p[0] + c * p[1]) + params.translation[1]);
    }
    out
}
