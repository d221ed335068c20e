//! Stepwise peripheral acuity loss.
//!
//! The canvas is split into concentric bands by distance from its center.
//! Band `i` shows a copy of the image that was down-sampled by `scales[i]`
//! and up-sampled back, both with nearest-neighbour sampling, so the
//! periphery only ever repeats source samples and never blends them.

use crate::error::{Error, Result};
use crate::imaging::{Canvas, ImageBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct AcuityProfile {
    pub n_steps: usize,
    pub min_acuity: f64,
    /// Radius (px) at which the outermost band starts being clamped.
    pub d_max: u32,
    pub scales: Vec<f64>,
}

impl AcuityProfile {
    pub fn new(n_steps: usize, min_acuity: f64, d_max: u32) -> Result<Self> {
        if d_max == 0 {
            return Err(Error::InvalidArgument("d_max must be > 0".into()));
        }
        Ok(Self {
            n_steps,
            min_acuity,
            d_max,
            scales: acuity_scales(n_steps, min_acuity)?,
        })
    }

    /// 20 steps from 1.0 down to 0.2, reaching the floor at half the canvas width.
    pub fn standard(canvas: Canvas) -> Self {
        Self::new(20, 0.2, canvas.width / 2).expect("standard profile is valid")
    }
}

/// Log-uniform scale factors: `scales[i] = min_acuity^(i / (n_steps - 1))`.
pub fn acuity_scales(n_steps: usize, min_acuity: f64) -> Result<Vec<f64>> {
    if n_steps < 2 {
        return Err(Error::InvalidArgument(format!("n_steps must be >= 2, got {n_steps}")));
    }
    if !(min_acuity > 0.0 && min_acuity <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_acuity must lie in (0, 1], got {min_acuity}"
        )));
    }
    let last = (n_steps - 1) as f64;
    Ok((0..n_steps)
        .map(|i| min_acuity.powf(i as f64 / last))
        .collect())
}

/// Reduced size along one axis: round-half-away-from-zero, at least 1.
pub fn reduced_len(len: usize, scale: f64) -> usize {
    ((len as f64 * scale).round() as usize).max(1)
}

fn nearest(i: usize, from: usize, to: usize) -> usize {
    // Center-aligned nearest sample of a `from`-long axis for index `i` of a `to`-long axis.
    (((2 * i + 1) * from) / (2 * to)).min(from - 1)
}

/// For each output index along an axis of `len`, the source index that
/// survives a down- then up-sampling round trip at `scale`.
pub fn source_indices(len: usize, scale: f64) -> Vec<usize> {
    let small = reduced_len(len, scale);
    (0..len)
        .map(|x| nearest(nearest(x, small, len), len, small))
        .collect()
}

pub fn resample_layer(image: &ImageBuffer, scale: f64) -> Result<ImageBuffer> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidArgument(format!("scale must lie in (0, 1], got {scale}")));
    }
    let xs = source_indices(image.width(), scale);
    let ys = source_indices(image.height(), scale);
    let mut out = image.clone();
    for (y, &sy) in ys.iter().enumerate() {
        for (x, &sx) in xs.iter().enumerate() {
            out.set_pixel(x, y, image.pixel(sx, sy));
        }
    }
    Ok(out)
}

/// Band of `pixel`: `min(floor(n * d / d_max), n - 1)` with `d` the Euclidean
/// distance to `center`, evaluated exactly in integers.
pub fn band_index(pixel: (i64, i64), center: (i64, i64), profile: &AcuityProfile) -> usize {
    let (dx, dy) = (pixel.0 - center.0, pixel.1 - center.1);
    let n = profile.n_steps as u128;
    let scaled_sq = n * n * (dx * dx + dy * dy) as u128;
    let band = isqrt(scaled_sq) / profile.d_max as u128;
    (band as usize).min(profile.n_steps - 1)
}

fn isqrt(v: u128) -> u128 {
    if v < 2 {
        return v;
    }
    let mut x = (v as f64).sqrt() as u128;
    while x * x > v {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= v {
        x += 1;
    }
    x
}

/// Applies the banded acuity reduction. Each pixel is read from the resampled
/// copy belonging to its band.
pub fn apply_acuity(image: &ImageBuffer, profile: &AcuityProfile) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    let xs: Vec<Vec<usize>> = profile.scales.iter().map(|&s| source_indices(w, s)).collect();
    let ys: Vec<Vec<usize>> = profile.scales.iter().map(|&s| source_indices(h, s)).collect();
    let (cx, cy) = image.canvas().center();
    let center = (cx as i64, cy as i64);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let band = band_index((x as i64, y as i64), center, profile);
            if band == 0 && profile.scales[0] == 1.0 {
                continue;
            }
            out.set_pixel(x, y, image.pixel(xs[band][x], ys[band][y]));
        }
    }
    out
}
