//! Image-domain and parameter-domain error measures.

use crate::error::{Error, Result};
use crate::motion_model::{MotionSpline, ScenarioMask};
use crate::simulation::Volume;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Volume, b: &Volume) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    check_shapes(a, b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// Mean local SSIM of `a` against the ground truth `gt`, dynamic range
/// taken from `gt`.
pub fn ssim(a: &Volume, gt: &Volume) -> Result<f64> {
    check_shapes(a, gt)?;
    let (lo, hi) = gt
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    ssim_with_range(a, gt, if range > 0.0 { range } else { 1.0 })
}

/// Mean SSIM over every fully contained `7³` window (uniform weights,
/// population moments).
pub fn ssim_with_range(a: &Volume, b: &Volume, range: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let [nx, ny, nz] = a.shape();
    let w = SSIM_WINDOW;
    if nx < w || ny < w || nz < w {
        return Err(Error::InvalidGrid(format!(
            "volume {nx}x{ny}x{nz} is smaller than the {w}^3 SSIM window"
        )));
    }
    let shape = [nx, ny, nz];
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    };
    let sx = box_sum(&a.data, shape, w);
    let sy = box_sum(&b.data, shape, w);
    let sxx = box_sum(&prod(&|x, _| x * x), shape, w);
    let syy = box_sum(&prod(&|_, y| y * y), shape, w);
    let sxy = box_sum(&prod(&|x, y| x * y), shape, w);
    let n = (w * w * w) as f64;
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    for k in 0..sx.len() {
        let (mx, my) = (sx[k] / n, sy[k] / n);
        let vx = sxx[k] / n - mx * mx;
        let vy = syy[k] / n - my * my;
        let cov = sxy[k] / n - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / sx.len() as f64)
}

/// Sums over every contained `w³` box, separably along x, y, z.
fn box_sum(data: &[f64], [nx, ny, nz]: [usize; 3], w: usize) -> Vec<f64> {
    // Along x.
    let ox = nx - w + 1;
    let mut a = vec![0.0; ox * ny * nz];
    for line in 0..ny * nz {
        running_sums(&data[line * nx..(line + 1) * nx], w, &mut a[line * ox..(line + 1) * ox]);
    }
    // Along y.
    let oy = ny - w + 1;
    let mut b = vec![0.0; ox * oy * nz];
    for z in 0..nz {
        for x in 0..ox {
            let col: Vec<f64> = (0..ny).map(|y| a[(z * ny + y) * ox + x]).collect();
            let mut out = vec![0.0; oy];
            running_sums(&col, w, &mut out);
            for (y, v) in out.into_iter().enumerate() {
                b[(z * oy + y) * ox + x] = v;
            }
        }
    }
    // Along z.
    let oz = nz - w + 1;
    let plane = ox * oy;
    let mut c = vec![0.0; plane * oz];
    for k in 0..plane {
        let col: Vec<f64> = (0..nz).map(|z| b[z * plane + k]).collect();
        let mut out = vec![0.0; oz];
        running_sums(&col, w, &mut out);
        for (z, v) in out.into_iter().enumerate() {
            c[z * plane + k] = v;
        }
    }
    c
}

/// Window sums recomputed directly per window to avoid drift.
fn running_sums(line: &[f64], w: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = line[i..i + w].iter().sum();
    }
}

/// Mean absolute difference per parameter over all views; translations in
/// µm, rotations in degrees. Inactive parameters are `None`.
pub fn param_l1(
    gt: &MotionSpline,
    est: &MotionSpline,
    n: usize,
    mask: &ScenarioMask,
) -> Result<[Option<f64>; 6]> {
    let a = gt.expand(n)?;
    let b = est.expand(n)?;
    let mut out = [None; 6];
    for (k, slot) in out.iter_mut().enumerate() {
        if !mask.active[k] {
            continue;
        }
        let scale = if k < 3 { 1000.0 } else { 1.0 };
        let sum: f64 = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p.to_array()[k] - q.to_array()[k]).abs())
            .sum();
        *slot = Some(scale * sum / n as f64);
    }
    Ok(out)
}
