//! Derivative of the 2D Radon transform of projection images.
//!
//! Lines are parameterized by normal angle `alpha ∈ [0, π)` and signed
//! distance `t` (pixels) from the image center, the point
//! `((width - 1) / 2, (height - 1) / 2)` in pixel coordinates.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_f32_le, write_f32_le};

/// Sampling step along each line, in pixels.
pub const LINE_STEP: f64 = 0.5;

/// Default number of line angles.
pub const DEFAULT_N_ALPHA: usize = 200;

/// Detector image of line-integral values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in mm.
    pub spacing: f64,
    pub data: Vec<f64>,
}

impl ProjectionImage {
    pub fn new(width: usize, height: usize, spacing: f64, data: Vec<f64>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::LengthMismatch {
                what: "image data",
                expected: width * height,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("image contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            spacing,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, spacing: f64) -> Self {
        Self {
            width,
            height,
            spacing,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Bilinear interpolation with zero outside the pixel grid.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let fx = x.floor();
        let fy = y.floor();
        if fx < -1.0 || fy < -1.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return 0.0;
        }
        let (ax, ay) = (x - fx, y - fy);
        let (x0, y0) = (fx as isize, fy as isize);
        let px = |c: isize, r: isize| {
            if c < 0 || r < 0 || c >= self.width as isize || r >= self.height as isize {
                0.0
            } else {
                self.data[r as usize * self.width + c as usize]
            }
        };
        (1.0 - ay) * ((1.0 - ax) * px(x0, y0) + ax * px(x0 + 1, y0))
            + ay * ((1.0 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1))
    }

    /// Half the image diagonal in pixels.
    pub fn half_diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64) / 2.0
    }
}

/// Sampled `d/dt` of the Radon transform on a regular `(alpha, t)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonDerivativeTable {
    /// Size of the source image in pixels.
    pub width: usize,
    pub height: usize,
    pub n_alpha: usize,
    pub n_t: usize,
    /// `π / n_alpha`.
    pub alpha_spacing: f64,
    pub t_spacing: f64,
    pub t_max: f64,
    /// Row `i` holds angle `i · alpha_spacing`, column `j` holds
    /// `t = -t_max + j · t_spacing`.
    pub data: Vec<f64>,
}

/// JSON sidecar of a cached table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub width: usize,
    pub height: usize,
    pub n_alpha: usize,
    pub n_t: usize,
    pub alpha_spacing: f64,
    pub t_spacing: f64,
    pub t_max: f64,
}

/// Default grid for an image: 200 angles, `n_t` the next odd count at least
/// the diagonal length in pixels.
pub fn default_grid(width: usize, height: usize) -> (usize, usize) {
    let diag = (width as f64).hypot(height as f64).ceil() as usize;
    (DEFAULT_N_ALPHA, diag | 1)
}

fn check_grid(n_alpha: usize, n_t: usize) -> Result<()> {
    if n_alpha < 2 {
        return Err(Error::InvalidGrid(format!("n_alpha must be >= 2, got {n_alpha}")));
    }
    if n_t < 3 || n_t % 2 == 0 {
        return Err(Error::InvalidGrid(format!("n_t must be odd and >= 3, got {n_t}")));
    }
    Ok(())
}

/// Line integral of `img` over the line `(alpha, t)` by bilinear sampling at
/// [`LINE_STEP`] along a fixed abscissa grid symmetric about the foot point.
fn line_integral(img: &ProjectionImage, cos_a: f64, sin_a: f64, t: f64, half_len: f64) -> f64 {
    let (cx, cy) = img.center();
    let px = cx + t * cos_a;
    let py = cy + t * sin_a;
    let (dx, dy) = (-sin_a, cos_a);
    let k_half = (half_len / LINE_STEP).floor() as i64;

    // Restrict to abscissae where bilinear support is non-empty.
    let (mut lo, mut hi) = (-k_half as f64 * LINE_STEP, k_half as f64 * LINE_STEP);
    let clip = |p: f64, d: f64, min: f64, max: f64, lo: &mut f64, hi: &mut f64| {
        if d.abs() < 1e-15 {
            if p <= min || p >= max {
                *lo = 1.0;
                *hi = 0.0;
            }
        } else {
            let (a, b) = ((min - p) / d, (max - p) / d);
            *lo = lo.max(a.min(b));
            *hi = hi.min(a.max(b));
        }
    };
    clip(px, dx, -1.0, img.width as f64, &mut lo, &mut hi);
    clip(py, dy, -1.0, img.height as f64, &mut lo, &mut hi);
    if lo > hi {
        return 0.0;
    }
    let k0 = ((lo / LINE_STEP).floor() as i64).max(-k_half);
    let k1 = ((hi / LINE_STEP).ceil() as i64).min(k_half);
    let mut sum = 0.0;
    for k in k0..=k1 {
        let s = k as f64 * LINE_STEP;
        sum += img.bilinear(px + s * dx, py + s * dy);
    }
    sum * LINE_STEP
}

/// Builds the Radon-derivative table of `img`.
pub fn radon_derivative(img: &ProjectionImage, n_alpha: usize, n_t: usize) -> Result<RadonDerivativeTable> {
    check_grid(n_alpha, n_t)?;
    let t_max = img.half_diagonal();
    let t_spacing = 2.0 * t_max / (n_t - 1) as f64;
    let alpha_spacing = PI / n_alpha as f64;
    let rows: Vec<Vec<f64>> = (0..n_alpha)
        .into_par_iter()
        .map(|i| {
            let (sin_a, cos_a) = (i as f64 * alpha_spacing).sin_cos();
            let rho: Vec<f64> = (0..n_t)
                .map(|j| line_integral(img, cos_a, sin_a, -t_max + j as f64 * t_spacing, t_max))
                .collect();
            central_difference(&rho, t_spacing)
        })
        .collect();
    Ok(RadonDerivativeTable {
        width: img.width,
        height: img.height,
        n_alpha,
        n_t,
        alpha_spacing,
        t_spacing,
        t_max,
        data: rows.concat(),
    })
}

fn central_difference(rho: &[f64], h: f64) -> Vec<f64> {
    let n = rho.len();
    (0..n)
        .map(|j| match j {
            0 => (rho[1] - rho[0]) / h,
            j if j == n - 1 => (rho[n - 1] - rho[n - 2]) / h,
            j => (rho[j + 1] - rho[j - 1]) / (2.0 * h),
        })
        .collect()
}

impl RadonDerivativeTable {
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_t + j]
    }

    /// `t` coordinate of column `j`.
    /// Image center the `t` axis is measured from.
    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn t_at(&self, j: usize) -> f64 {
        -self.t_max + j as f64 * self.t_spacing
    }

    #[inline]
    fn interp_t(&self, row: usize, t: f64) -> f64 {
        let x = (t + self.t_max) / self.t_spacing;
        if !(x >= 0.0 && x <= (self.n_t - 1) as f64) {
            return 0.0;
        }
        let j = (x.floor() as usize).min(self.n_t - 2);
        let f = x - j as f64;
        let base = row * self.n_t + j;
        let (a, b) = (self.data[base], self.data[base + 1]);
        if f == 0.0 {
            a
        } else {
            a + f * (b - a)
        }
    }

    /// Bilinear lookup. Angles outside `[0, π)` are folded with
    /// `ρ'(α + π, -t) = -ρ'(α, t)`; `|t| > t_max` gives 0.
    #[inline]
    pub fn sample(&self, alpha: f64, t: f64) -> f64 {
        if !(alpha.is_finite() && t.is_finite()) {
            return 0.0;
        }
        let turns = (alpha / PI).floor();
        let (a, t, sign) = if turns == 0.0 {
            (alpha, t, 1.0)
        } else {
            let odd = (turns as i64).rem_euclid(2) == 1;
            let a = alpha - turns * PI;
            if odd {
                (a, -t, -1.0)
            } else {
                (a, t, 1.0)
            }
        };
        if t.abs() > self.t_max {
            return 0.0;
        }
        let y = a.max(0.0) / self.alpha_spacing;
        let i = (y.floor() as usize).min(self.n_alpha - 1);
        let f = y - i as f64;
        let v0 = self.interp_t(i, t);
        if f == 0.0 {
            return sign * v0;
        }
        let v1 = if i + 1 < self.n_alpha {
            self.interp_t(i + 1, t)
        } else {
            -self.interp_t(0, -t)
        };
        sign * (v0 + f * (v1 - v0))
    }

    pub fn header(&self) -> TableHeader {
        TableHeader {
            width: self.width,
            height: self.height,
            n_alpha: self.n_alpha,
            n_t: self.n_t,
            alpha_spacing: self.alpha_spacing,
            t_spacing: self.t_spacing,
            t_max: self.t_max,
        }
    }

    /// Writes `<stem>.raw` (little-endian f32) and `<stem>.json`.
    pub fn write_cache(&self, stem: &Path) -> Result<()> {
        let json = stem.with_extension("json");
        let body = serde_json::to_string_pretty(&self.header()).expect("header serializes");
        fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        write_f32_le(&stem.with_extension("raw"), &self.data)
    }

    pub fn read_cache(stem: &Path) -> Result<Self> {
        let json = stem.with_extension("json");
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let h: TableHeader = serde_json::from_str(&text).map_err(|e| Error::format(&json, e))?;
        check_grid(h.n_alpha, h.n_t)?;
        let raw = stem.with_extension("raw");
        let data = read_f32_le(&raw, h.n_alpha * h.n_t)?;
        Ok(Self {
            width: h.width,
            height: h.height,
            n_alpha: h.n_alpha,
            n_t: h.n_t,
            alpha_spacing: h.alpha_spacing,
            t_spacing: h.t_spacing,
            t_max: h.t_max,
            data,
        })
    }
}
