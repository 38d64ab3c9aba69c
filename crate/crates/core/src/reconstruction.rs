//! FDK reconstruction for short-scan circular trajectories, driven directly
//! by projection matrices.

use std::f64::consts::{FRAC_PI_4, PI};
use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::Vector3;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ProjectionMatrix;
use crate::radon::ProjectionImage;
use crate::simulation::{ScanGeometry, Volume, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampFilter {
    #[default]
    RamLak,
    Hann,
}

impl std::str::FromStr for RampFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ram-lak" => Ok(Self::RamLak),
            "hann" => Ok(Self::Hann),
            other => Err(Error::Config(format!("unknown filter `{other}` (expected ram-lak or hann)"))),
        }
    }
}

/// Short-scan redundancy weight for source angle `beta` (from the scan
/// start) and fan angle `gamma`, both in radians, with `delta` half the
/// overscan beyond 180°.
pub fn parker_weight(beta: f64, gamma: f64, delta: f64) -> f64 {
    if beta < 0.0 || beta > PI + 2.0 * delta {
        return 0.0;
    }
    if beta < 2.0 * (delta - gamma) {
        (FRAC_PI_4 * beta / (delta - gamma)).sin().powi(2)
    } else if beta <= PI - 2.0 * gamma {
        1.0
    } else {
        (FRAC_PI_4 * (PI + 2.0 * delta - beta) / (delta + gamma)).sin().powi(2)
    }
}

/// Frequency response of the discrete ramp filter for rows zero-padded to
/// `len` samples of spacing `tau`.
fn ramp_response(len: usize, tau: f64, filter: RampFilter) -> Vec<f64> {
    let mut h = vec![Complex::new(0.0, 0.0); len];
    for (k, v) in h.iter_mut().enumerate() {
        let n = if k <= len / 2 { k as i64 } else { k as i64 - len as i64 };
        let value = if n == 0 {
            1.0 / (4.0 * tau * tau)
        } else if n % 2 != 0 {
            -1.0 / (PI * PI * (n * n) as f64 * tau * tau)
        } else {
            0.0
        };
        *v = Complex::new(value * tau, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut h);
    h.iter()
        .enumerate()
        .map(|(k, c)| {
            let window = match filter {
                RampFilter::RamLak => 1.0,
                RampFilter::Hann => {
                    let f = k.min(len - k) as f64 / (len as f64 / 2.0);
                    0.5 * (1.0 + (PI * f).cos())
                }
            };
            c.re * window
        })
        .collect()
}

/// Signed angle from the central ray to `ray`, counter-clockwise about +z.
fn fan_angle(central: &Vector3<f64>, ray: &Vector3<f64>) -> f64 {
    central.cross(ray).z.atan2(central.xy().dot(&ray.xy()))
}

/// Cosine and redundancy weighting followed by row-wise ramp filtering.
fn filter_view(
    img: &ProjectionImage,
    p: &ProjectionMatrix,
    view: usize,
    g: &ScanGeometry,
    response: &[f64],
) -> Result<Vec<f64>> {
    let m_inv = p.normalized().left_block().try_inverse().ok_or(Error::DegenerateMatrix)?;
    let (cu, cv) = g.principal_point();
    let beta = g.view_angle(view);
    let delta = (g.angular_range_deg.to_radians() - PI) / 2.0;
    let central = m_inv * Vector3::new(cu, cv, 1.0);
    let parker: Vec<f64> = (0..img.width)
        .map(|c| parker_weight(beta, fan_angle(&central, &(m_inv * Vector3::new(c as f64, cv, 1.0))), delta))
        .collect();
    let len = response.len();
    let fft = FftPlanner::new().plan_fft_forward(len);
    let ifft = FftPlanner::new().plan_fft_inverse(len);
    let mut out = vec![0.0; img.width * img.height];
    let mut row = vec![Complex::new(0.0, 0.0); len];
    for r in 0..img.height {
        row.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        for c in 0..img.width {
            let cosine = 1.0 / (m_inv * Vector3::new(c as f64, r as f64, 1.0)).norm();
            row[c].re = img.get(c, r) * cosine * parker[c];
        }
        fft.process(&mut row);
        for (v, h) in row.iter_mut().zip(response) {
            *v *= *h;
        }
        ifft.process(&mut row);
        for c in 0..img.width {
            out[r * img.width + c] = row[c].re / len as f64;
        }
    }
    Ok(out)
}

/// Checks that every voxel center lies inside the scanned cylinder.
pub fn check_fov(grid: &VolumeGrid, g: &ScanGeometry) -> Result<()> {
    let radius = g.fov_radius();
    let extreme = |o: f64, n: usize| o.abs().max((o + (n as f64 - 1.0) * grid.spacing).abs());
    let rx = extreme(grid.origin[0], grid.nx);
    let ry = extreme(grid.origin[1], grid.ny);
    if rx.hypot(ry) > radius {
        return Err(Error::GridOutsideFov(format!(
            "grid reaches {:.3} mm from the rotation axis, field of view radius is {radius:.3} mm",
            rx.hypot(ry)
        )));
    }
    Ok(())
}

/// Filtered backprojection of `imgs` with matrices `ps`.
pub fn fdk(
    imgs: &[ProjectionImage],
    ps: &[ProjectionMatrix],
    grid: &VolumeGrid,
    g: &ScanGeometry,
    filter: RampFilter,
) -> Result<Volume> {
    if imgs.len() != ps.len() {
        return Err(Error::LengthMismatch {
            what: "projection matrices",
            expected: imgs.len(),
            actual: ps.len(),
        });
    }
    if imgs.len() != g.n_projections {
        return Err(Error::LengthMismatch {
            what: "projection images",
            expected: g.n_projections,
            actual: imgs.len(),
        });
    }
    g.validate()?;
    grid.validate()?;
    check_fov(grid, g)?;
    if let Some(img) = imgs
        .iter()
        .find(|i| i.width != g.detector_cols || i.height != g.detector_rows)
    {
        return Err(Error::InvalidGeometry(format!(
            "image is {}x{}, geometry expects {}x{}",
            img.width, img.height, g.detector_cols, g.detector_rows
        )));
    }

    let sod = g.source_isocenter_mm;
    let tau = g.pixel_pitch_mm * sod / g.source_detector_mm;
    let len = (2 * g.detector_cols).next_power_of_two();
    let response = ramp_response(len, tau, filter);
    let filtered = imgs
        .par_iter()
        .zip(ps)
        .enumerate()
        .map(|(i, (img, p))| {
            filter_view(img, p, i, g, &response).map(|data| ProjectionImage {
                data,
                ..img.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mats: Vec<_> = ps.iter().map(|p| p.normalized().0).collect();
    let scale = g.angular_step() * sod * sod;

    let mut vol = Volume::zeros(grid.clone());
    let (nx, ny) = (grid.nx, grid.ny);
    vol.data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let pos = grid.position(x, y, z).push(1.0);
                    let mut sum = 0.0;
                    for (m, img) in mats.iter().zip(&filtered) {
                        let h = m * pos;
                        let w = h[2];
                        if w <= 0.0 {
                            continue;
                        }
                        sum += img.bilinear(h[0] / w, h[1] / w) / (w * w);
                    }
                    slab[y * nx + x] = sum * scale;
                }
            }
        });
    Ok(vol)
}

/// Writes axial slice `z` as a 16-bit grayscale PNG, mapping
/// `[lo, hi]` linearly onto the full range.
pub fn render_slice(vol: &Volume, z: usize, window: (f64, f64), path: &Path) -> Result<()> {
    let [nx, ny, nz] = vol.shape();
    if z >= nz {
        return Err(Error::Config(format!("slice {z} outside volume depth {nz}")));
    }
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::Config(format!("window [{lo}, {hi}] is empty")));
    }
    let img = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(nx as u32, ny as u32, |x, y| {
        let v = (vol.at(x as usize, y as usize, z) - lo) / (hi - lo);
        Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

/// Slice index `offset` of the half-depth away from the center slice.
pub fn off_center_slice(nz: usize, offset: f64) -> usize {
    let center = (nz as f64 - 1.0) / 2.0;
    ((center + offset * nz as f64 / 2.0).round().max(0.0) as usize).min(nz.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_motion, RigidParams};
    use crate::metrics::{mse, ssim};
    use crate::simulation::{forward_project, make_phantom, short_scan_trajectory, Phantom};

    fn project_all(ph: &Phantom, g: &ScanGeometry, ps: &[ProjectionMatrix]) -> Vec<ProjectionImage> {
        ps.iter()
            .map(|p| forward_project(ph, p, g.detector_rows, g.detector_cols, g.pixel_pitch_mm).unwrap())
            .collect()
    }

    #[test]
    fn parker_weights_sum_to_one_on_conjugate_rays() {
        let g = ScanGeometry::default();
        let delta = (g.angular_range_deg.to_radians() - PI) / 2.0;
        let gamma_max = (g.fan_angle_deg() / 2.0).to_radians();
        let r = g.source_isocenter_mm;
        for bi in 0..200 {
            let beta = (PI + 2.0 * delta) * bi as f64 / 199.0;
            for gi in 0..21 {
                let gamma = gamma_max * (gi as f64 / 10.0 - 1.0);
                // Intersect the ray with the source circle again to find
                // the conjugate source angle and fan angle.
                let s = Vector3::new(beta.cos(), beta.sin(), 0.0) * r;
                let phi = beta + PI + gamma;
                let d = Vector3::new(phi.cos(), phi.sin(), 0.0);
                let t = -2.0 * s.dot(&d);
                let s2 = s + d * t;
                let mut beta2 = s2.y.atan2(s2.x);
                let inward = -s2.normalize();
                let back = -d;
                let gamma2 = inward.x * back.y - inward.y * back.x;
                let gamma2 = gamma2.atan2(inward.dot(&back));
                // Pick the representative of beta2 inside the scan if any.
                while beta2 < -1e-9 {
                    beta2 += 2.0 * PI;
                }
                let w = parker_weight(beta, gamma, delta) + parker_weight(beta2, gamma2, delta);
                let w_alt = parker_weight(beta, gamma, delta) + parker_weight(beta2 - 2.0 * PI, gamma2, delta);
                assert!((w - 1.0).abs() < 1e-9 || (w_alt - 1.0).abs() < 1e-9, "beta {beta}, gamma {gamma}: {w}");
            }
        }
    }

    #[test]
    fn hann_attenuates_high_frequencies() {
        let a = ramp_response(64, 0.3, RampFilter::RamLak);
        let b = ramp_response(64, 0.3, RampFilter::Hann);
        assert!(b[32].abs() < 1e-12 && a[32] > 0.0);
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!("hann".parse::<RampFilter>().is_ok() && "x".parse::<RampFilter>().is_err());
    }

    #[test]
    fn zero_projections_give_zero_volume() {
        let g = ScanGeometry::default();
        let ps = short_scan_trajectory(&g).unwrap();
        let imgs = vec![ProjectionImage::zeros(96, 64, 0.5); 60];
        let v = fdk(&imgs, &ps, &VolumeGrid::centered_cube(16, 0.6), &g, RampFilter::RamLak).unwrap();
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grid_outside_fov_and_length_mismatch() {
        let g = ScanGeometry::default();
        let ps = short_scan_trajectory(&g).unwrap();
        let imgs = vec![ProjectionImage::zeros(96, 64, 0.5); 60];
        let big = VolumeGrid::centered_cube(64, 0.5);
        assert!(matches!(fdk(&imgs, &ps, &big, &g, RampFilter::RamLak), Err(Error::GridOutsideFov(_))));
        assert!(matches!(
            fdk(&imgs[..59], &ps, &VolumeGrid::centered_cube(8, 0.3), &g, RampFilter::RamLak),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sphere_reconstruction() {
        let g = ScanGeometry::default();
        let ps = short_scan_trajectory(&g).unwrap();
        let imgs = project_all(&make_phantom("single-sphere").unwrap(), &g, &ps);
        let grid = VolumeGrid::centered_cube(64, 0.3);
        let v = fdk(&imgs, &ps, &grid, &g, RampFilter::RamLak).unwrap();
        assert!(v.data.iter().all(|x| x.is_finite()));
        let center = (v.at(31, 31, 31) + v.at(32, 32, 32)) / 2.0;
        assert!((center - 1.0).abs() <= 0.15, "center {center}");
        // Redundancy weighting errors show up as shading across the sphere.
        for i in 20..44 {
            for val in [v.at(i, 32, 32), v.at(32, i, 32), v.at(32, 32, i)] {
                assert!((val - 1.0).abs() <= 0.05, "interior {val} at {i}");
            }
        }
        // Background: everything more than 1 mm outside the sphere. Sparse
        // view streaks reach about 0.1 in isolated voxels, so the mean and
        // the 95th percentile are checked.
        let mut bg: Vec<f64> = Vec::new();
        for z in 0..64 {
            for y in 0..64 {
                for x in 0..64 {
                    if grid.position(x, y, z).norm() > 5.0 {
                        bg.push(v.at(x, y, z).abs());
                    }
                }
            }
        }
        bg.sort_by(f64::total_cmp);
        let mean = bg.iter().sum::<f64>() / bg.len() as f64;
        let p95 = bg[(bg.len() - 1) * 95 / 100];
        assert!(mean <= 0.05 && p95 <= 0.05, "background mean {mean}, p95 {p95}");
    }

    #[test]
    fn linear_in_the_data() {
        let g = ScanGeometry::default();
        let ps = short_scan_trajectory(&g).unwrap();
        let imgs = project_all(&make_phantom("two-spheres").unwrap(), &g, &ps);
        let scaled: Vec<_> = imgs
            .iter()
            .map(|i| ProjectionImage {
                data: i.data.iter().map(|v| v * 3.5).collect(),
                ..i.clone()
            })
            .collect();
        let grid = VolumeGrid::centered_cube(20, 0.6);
        let a = fdk(&imgs, &ps, &grid, &g, RampFilter::RamLak).unwrap();
        let b = fdk(&scaled, &ps, &grid, &g, RampFilter::RamLak).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((3.5 * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn finer_angular_sampling_does_not_hurt() {
        let ph = make_phantom("two-spheres").unwrap();
        let grid = VolumeGrid::centered_cube(32, 0.5);
        let truth = ph.voxelize(&grid);
        let rmse = |n: usize| {
            let g = ScanGeometry {
                n_projections: n,
                ..ScanGeometry::default()
            };
            let ps = short_scan_trajectory(&g).unwrap();
            let v = fdk(&project_all(&ph, &g, &ps), &ps, &grid, &g, RampFilter::RamLak).unwrap();
            mse(&v, &truth).unwrap().sqrt()
        };
        let (coarse, fine) = (rmse(30), rmse(60));
        assert!(fine <= coarse, "{fine} > {coarse}");
    }

    #[test]
    fn motion_lowers_ssim() {
        let g = ScanGeometry::default();
        let ps = short_scan_trajectory(&g).unwrap();
        let ph = make_phantom("tibia-like").unwrap();
        let imgs = project_all(&ph, &g, &ps);
        let grid = VolumeGrid::centered_cube(48, 0.4);
        let truth = ph.voxelize(&grid);
        let clean = fdk(&imgs, &ps, &grid, &g, RampFilter::RamLak).unwrap();
        let moved: Vec<_> = ps
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                apply_motion(p, &RigidParams { tz: 0.05 * s, rx: 0.5 * s, ..RigidParams::ZERO })
            })
            .collect();
        let corrupt = fdk(&imgs, &moved, &grid, &g, RampFilter::RamLak).unwrap();
        assert!(ssim(&clean, &truth).unwrap() > ssim(&corrupt, &truth).unwrap());
    }

    #[test]
    fn slice_png() {
        let dir = tempfile::tempdir().unwrap();
        let grid = VolumeGrid::centered_cube(16, 0.5);
        let v = make_phantom("single-sphere").unwrap().voxelize(&grid);
        let path = dir.path().join("s.png");
        render_slice(&v, off_center_slice(16, 0.25), (0.0, 1.0), &path).unwrap();
        let back = image::open(&path).unwrap().into_luma16();
        assert_eq!(back.dimensions(), (16, 16));
        assert_eq!(back.get_pixel(8, 8)[0], 65535);
        assert_eq!(back.get_pixel(0, 0)[0], 0);
        assert_eq!(off_center_slice(64, 0.25), 40);
    }
}
