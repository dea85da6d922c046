//! Standard edge post-processing: Gaussian smoothing, oriented non-maximum
//! suppression and Zhang–Suen thinning.

use super::BinaryMap;
use crate::image::{bilinear, GrayImage};

/// Separable Gaussian blur with border replication; kernel radius `⌈3σ⌉`.
pub fn gaussian_smooth(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (img.width(), img.height());
    let horiz = GrayImage::from_fn(w, h, |x, y| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * img.get_clamped(x as isize + i, y as isize))
            .sum()
    });
    GrayImage::from_fn(w, h, |x, y| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * horiz.get_clamped(x as isize, y as isize + i))
            .sum()
    })
}

/// Unit normal across a ridge of `s` at `(x, y)`: the Hessian eigenvector of
/// the most negative eigenvalue. `None` where the Hessian vanishes.
fn ridge_normal(s: &GrayImage, x: usize, y: usize) -> Option<(f64, f64)> {
    let (xi, yi) = (x as isize, y as isize);
    let c = s.get(x, y);
    let sxx = s.get_clamped(xi + 1, yi) - 2.0 * c + s.get_clamped(xi - 1, yi);
    let syy = s.get_clamped(xi, yi + 1) - 2.0 * c + s.get_clamped(xi, yi - 1);
    let sxy = 0.25
        * (s.get_clamped(xi + 1, yi + 1) - s.get_clamped(xi + 1, yi - 1)
            - s.get_clamped(xi - 1, yi + 1)
            + s.get_clamped(xi - 1, yi - 1));
    let half = 0.5 * (sxx - syy);
    let lambda = 0.5 * (sxx + syy) - (half * half + sxy * sxy).sqrt();
    let a = (sxy, lambda - sxx);
    let b = (lambda - syy, sxy);
    let (vx, vy) = if a.0.hypot(a.1) >= b.0.hypot(b.1) { a } else { b };
    let n = vx.hypot(vy);
    if n < 1e-12 {
        None
    } else {
        Some((vx / n, vy / n))
    }
}

const NMS_SLACK: f64 = 1e-12;

/// Keeps each pixel of `prob` that is at least as large as both bilinearly
/// interpolated neighbors one pixel away along the ridge normal of the
/// smoothed map; suppressed pixels become 0.
pub fn non_max_suppress(prob: &GrayImage, sigma: f64) -> GrayImage {
    let s = gaussian_smooth(prob, sigma);
    GrayImage::from_fn(prob.width(), prob.height(), |x, y| {
        let v = prob.get(x, y);
        if v <= 0.0 {
            return 0.0;
        }
        let Some((nx, ny)) = ridge_normal(&s, x, y) else {
            return v;
        };
        let (fx, fy) = (x as f64, y as f64);
        let a = bilinear(prob, fx + nx, fy + ny);
        let b = bilinear(prob, fx - nx, fy - ny);
        if v + NMS_SLACK >= a && v + NMS_SLACK >= b {
            v
        } else {
            0.0
        }
    })
}

/// Zhang–Suen thinning to one-pixel-wide 8-connected curves. Pixels
/// outside the image count as background.
pub fn zhang_suen(mask: &BinaryMap) -> BinaryMap {
    let mut m = mask.clone();
    let (w, h) = (m.width(), m.height());
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            doomed.clear();
            for y in 0..h {
                for x in 0..w {
                    if !m.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as isize, y as isize);
                    // P2..P9 clockwise from north
                    let p = [
                        m.get_or_false(xi, yi - 1),
                        m.get_or_false(xi + 1, yi - 1),
                        m.get_or_false(xi + 1, yi),
                        m.get_or_false(xi + 1, yi + 1),
                        m.get_or_false(xi, yi + 1),
                        m.get_or_false(xi - 1, yi + 1),
                        m.get_or_false(xi - 1, yi),
                        m.get_or_false(xi - 1, yi - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                    let keep = if pass == 0 {
                        (n && e && s) || (e && s && wst)
                    } else {
                        (n && e && wst) || (n && s && wst)
                    };
                    if !keep {
                        doomed.push((x, y));
                    }
                }
            }
            for &(x, y) in &doomed {
                m.set(x, y, false);
            }
            changed |= !doomed.is_empty();
        }
        if !changed {
            return m;
        }
    }
}

/// Smoothing scale of the suppression step.
pub const NMS_SIGMA: f64 = 1.0;

/// Suppressed probability map, reusable across thresholds.
#[derive(Clone, Debug)]
pub struct Suppressed(GrayImage);

impl Suppressed {
    pub fn new(prob: &GrayImage) -> Self {
        Self(non_max_suppress(prob, NMS_SIGMA))
    }

    pub fn map(&self) -> &GrayImage {
        &self.0
    }

    /// Binarize at `tau`, then thin.
    pub fn at(&self, tau: f64) -> BinaryMap {
        zhang_suen(&BinaryMap::threshold(&self.0, tau))
    }
}

/// Full post-processing chain at one threshold.
pub fn nms_thin(prob: &GrayImage, tau: f64) -> BinaryMap {
    Suppressed::new(prob).at(tau)
}
