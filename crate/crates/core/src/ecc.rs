//! Epipolar consistency: pairwise inconsistency of Radon-derivative values on
//! corresponding epipolar lines, and the global cost over all pairs.
//!
//! Tables are built from cosine-weighted images (each pixel divided by the
//! length of its back-projected direction `M⁻¹ (u, v, 1)`) and every sample
//! is scaled by `|det M⁻¹| / s²`, with `s` the norm of the normal part of the
//! mapped line. With these factors both views of a pair sample the same
//! plane-integral derivative, so exact geometry gives `ΔM ≈ 0` up to table
//! discretization. Both factors are invariant under rigid motion, so tables
//! are computed once.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_motion, line_operator, recenter_line, source_position, EpipolarPencil, ProjectionMatrix,
    RigidParams,
};
use crate::radon::{radon_derivative, ProjectionImage, RadonDerivativeTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EccConfig {
    /// Pencil sampling step in radians.
    pub kappa_step: f64,
    /// Half-width of the sampled pencil in radians. `None` derives it per
    /// pair from the detector corners.
    pub kappa_max: Option<f64>,
    /// Only pairs `(i, j)` with `(j - i) % pair_stride == 0` are summed.
    pub pair_stride: usize,
}

impl Default for EccConfig {
    fn default() -> Self {
        Self {
            kappa_step: 0.1f64.to_radians(),
            kappa_max: None,
            pair_stride: 1,
        }
    }
}

impl EccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_step > 0.0 && self.kappa_step.is_finite()) {
            return Err(Error::Config(format!("kappa_step must be positive, got {}", self.kappa_step)));
        }
        if let Some(k) = self.kappa_max {
            if !(k >= self.kappa_step && k <= FRAC_PI_2) {
                return Err(Error::Config(format!(
                    "kappa_max must lie in [kappa_step, π/2], got {k}"
                )));
            }
        }
        if self.pair_stride == 0 {
            return Err(Error::Config("pair_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Divides every pixel by the length of its back-projected ray direction
/// under the normalized `P`.
pub fn weight_image(img: &ProjectionImage, p: &ProjectionMatrix) -> Result<ProjectionImage> {
    let m_inv = p
        .normalized()
        .left_block()
        .try_inverse()
        .ok_or(Error::DegenerateMatrix)?;
    let mut out = img.clone();
    for r in 0..img.height {
        for c in 0..img.width {
            let d = m_inv * Vector3::new(c as f64, r as f64, 1.0);
            out.data[r * img.width + c] /= d.norm();
        }
    }
    Ok(out)
}

/// Radon-derivative table of the weighted image.
pub fn weighted_table(
    img: &ProjectionImage,
    p: &ProjectionMatrix,
    n_alpha: usize,
    n_t: usize,
) -> Result<RadonDerivativeTable> {
    radon_derivative(&weight_image(img, p)?, n_alpha, n_t)
}

/// Per-view quantities shared by all pairs containing the view.
struct View<'a> {
    p: Matrix3x4<f64>,
    lines: Matrix3x4<f64>,
    m_inv: Matrix3<f64>,
    /// `|det M⁻¹|` of the normalized matrix.
    scale: f64,
    source: Vector4<f64>,
    table: &'a RadonDerivativeTable,
}

impl<'a> View<'a> {
    fn new(p: &ProjectionMatrix, table: &'a RadonDerivativeTable) -> Result<Self> {
        let pn = p.normalized();
        let m_inv = pn.left_block().try_inverse().ok_or(Error::DegenerateMatrix)?;
        let lines = line_operator(&pn).ok_or(Error::DegenerateMatrix)?;
        Ok(Self {
            p: pn.0,
            lines,
            m_inv,
            scale: m_inv.determinant().abs(),
            source: source_position(&pn)?,
            table,
        })
    }

    /// Image of plane `e` in centered detector coordinates.
    #[inline]
    fn line(&self, e: &Vector4<f64>) -> Vector3<f64> {
        let (cx, cy) = self.table.center();
        recenter_line(&(self.lines * e), cx, cy)
    }

    /// Weighted Radon derivative along the image of plane `e`.
    #[cfg(test)]
    fn sample(&self, e: &Vector4<f64>) -> f64 {
        self.sample_line(&self.line(e))
    }

    /// Weighted Radon derivative along a centered detector line.
    #[inline]
    fn sample_line(&self, l: &Vector3<f64>) -> f64 {
        let s2 = l[0] * l[0] + l[1] * l[1];
        if !(s2 > 1e-24 * l[2] * l[2]) {
            return 0.0;
        }
        let s = s2.sqrt();
        let v = self.table.sample(l[1].atan2(l[0]), -l[2] / s);
        if v == 0.0 {
            0.0
        } else {
            self.scale / s2 * v
        }
    }

    /// Pencil half-width that covers this view's detector.
    fn kappa_extent(&self, pencil: &EpipolarPencil, other_source: &Vector4<f64>) -> f64 {
        let (w, h) = (self.table.width as f64, self.table.height as f64);
        let (u0, u1, v0, v1) = (-0.5, w - 0.5, -0.5, h - 0.5);
        let epi = self.p * other_source;
        if epi[2].abs() > 1e-300 {
            let (u, v) = (epi[0] / epi[2], epi[1] / epi[2]);
            if u >= u0 && u <= u1 && v >= v0 && v <= v1 {
                return FRAC_PI_2;
            }
        }
        let mut k: Vec<f64> = [(u0, v0), (u1, v0), (u0, v1), (u1, v1)]
            .iter()
            .map(|&(u, v)| pencil.kappa_of_direction(&(self.m_inv * Vector3::new(u, v, 1.0))))
            .collect();
        k.sort_by(f64::total_cmp);
        // The covered arc is the complement of the widest gap on the circle
        // of plane angles (period π).
        let wrap_gap = k[0] + std::f64::consts::PI - k[3];
        let widest_inner = k.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if wrap_gap >= widest_inner {
            k[0].abs().max(k[3].abs())
        } else {
            FRAC_PI_2
        }
    }
}

fn pair_cost(a: &View, b: &View, cfg: &EccConfig) -> Result<f64> {
    let pencil = EpipolarPencil::new(&a.source, &b.source)?;
    let kmax = match cfg.kappa_max {
        Some(k) => k,
        None => a
            .kappa_extent(&pencil, &b.source)
            .max(b.kappa_extent(&pencil, &a.source)),
    };
    let n = (kmax / cfg.kappa_step + 1e-9).floor() as i64;
    // Lines are linear in the plane, so both pencils of lines are spanned by
    // the images of the two basis planes.
    let (e0, e1) = pencil.basis();
    let (a0, a1) = (a.line(&e0), a.line(&e1));
    let (b0, b1) = (b.line(&e0), b.line(&e1));
    let mut sum = 0.0;
    for j in -n..=n {
        let (s, c) = (j as f64 * cfg.kappa_step).sin_cos();
        let dm = a.sample_line(&(a0 * c + a1 * s)) - b.sample_line(&(b0 * c + b1 * s));
        sum += dm * dm;
    }
    Ok(sum)
}

/// Sum of squared `ΔM` over the sampled epipolar pencil of one pair.
pub fn pair_inconsistency(
    p0: &ProjectionMatrix,
    p1: &ProjectionMatrix,
    t0: &RadonDerivativeTable,
    t1: &RadonDerivativeTable,
    cfg: &EccConfig,
) -> Result<f64> {
    cfg.validate()?;
    pair_cost(&View::new(p0, t0)?, &View::new(p1, t1)?, cfg)
}

/// Index pairs `(i, j)`, `i < j`, selected by the stride, in ascending order.
pub fn pair_indices(n: usize, stride: usize) -> Vec<(usize, usize)> {
    let stride = stride.max(1);
    (0..n)
        .flat_map(|i| ((i + stride)..n).step_by(stride).map(move |j| (i, j)))
        .collect()
}

/// Applies `params[i]` to `ps[i]` and sums the pairwise inconsistencies.
///
/// Pairs are evaluated in parallel and reduced sequentially in ascending
/// `(i, j)` order, so the result does not depend on the thread count.
pub fn total_cost(
    ps: &[ProjectionMatrix],
    tables: &[RadonDerivativeTable],
    params: &[RigidParams],
    cfg: &EccConfig,
) -> Result<f64> {
    cfg.validate()?;
    if tables.len() != ps.len() {
        return Err(Error::LengthMismatch {
            what: "tables",
            expected: ps.len(),
            actual: tables.len(),
        });
    }
    if params.len() != ps.len() {
        return Err(Error::LengthMismatch {
            what: "motion parameters",
            expected: ps.len(),
            actual: params.len(),
        });
    }
    if ps.len() < 2 {
        return Err(Error::LengthMismatch {
            what: "projections (at least 2)",
            expected: 2,
            actual: ps.len(),
        });
    }
    let views = ps
        .iter()
        .zip(params)
        .zip(tables)
        .map(|((p, m), t)| View::new(&apply_motion(p, m), t))
        .collect::<Result<Vec<_>>>()?;
    let pairs = pair_indices(ps.len(), cfg.pair_stride);
    let costs: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pair_cost(&views[i], &views[j], cfg))
        .collect();
    let mut sum = 0.0;
    for c in costs {
        sum += c?;
    }
    Ok(sum)
}
