//! Analytic phantoms, short-scan cone-beam trajectories, an exact forward
//! projector and geometric motion injection.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_motion, ProjectionMatrix};
use crate::io::{read_f32_le, read_json, write_f32_le, write_json};
use crate::motion_model::{MotionSpline, ScenarioMask};
use crate::radon::ProjectionImage;

/// Ellipsoid with constant density. `rotation_deg` follows the rigid
/// parameter convention (`Rz · Ry · Rx`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub rotation_deg: [f64; 3],
    pub density: f64,
}

impl Ellipsoid {
    pub fn sphere(center: [f64; 3], radius: f64, density: f64) -> Self {
        Self {
            center,
            semi_axes: [radius; 3],
            rotation_deg: [0.0; 3],
            density,
        }
    }

    fn rotation(&self) -> Matrix3<f64> {
        let [a, b, c] = self.rotation_deg;
        Rotation3::from_euler_angles(a.to_radians(), b.to_radians(), c.to_radians()).into_inner()
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        let q = self.rotation().transpose() * (x - Vector3::from(self.center));
        (0..3).map(|k| (q[k] / self.semi_axes[k]).powi(2)).sum::<f64>() <= 1.0
    }
}

/// Ellipsoid in a form suited to repeated ray intersection.
#[derive(Debug, Clone, Copy)]
struct PreparedEllipsoid {
    center: Vector3<f64>,
    /// `diag(1 / semi_axes) · Rᵀ`.
    to_unit: Matrix3<f64>,
    density: f64,
}

impl PreparedEllipsoid {
    fn new(e: &Ellipsoid) -> Self {
        let scale = Matrix3::from_diagonal(&Vector3::new(
            1.0 / e.semi_axes[0],
            1.0 / e.semi_axes[1],
            1.0 / e.semi_axes[2],
        ));
        Self {
            center: Vector3::from(e.center),
            to_unit: scale * e.rotation().transpose(),
            density: e.density,
        }
    }

    /// Chord length of the ray `origin + s · dir` (unit `dir`).
    #[inline]
    fn chord(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        let q = self.to_unit * (origin - self.center);
        let e = self.to_unit * dir;
        let a = e.norm_squared();
        let b = q.dot(&e);
        let c = q.norm_squared() - 1.0;
        let disc = b * b - a * c;
        if disc <= 0.0 {
            0.0
        } else {
            2.0 * disc.sqrt() / a
        }
    }
}

/// Sum of ellipsoids; negative densities carve cavities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub ellipsoids: Vec<Ellipsoid>,
}

impl Phantom {
    pub fn new(ellipsoids: Vec<Ellipsoid>) -> Result<Self> {
        if ellipsoids.is_empty() {
            return Err(Error::Config("phantom needs at least one ellipsoid".into()));
        }
        if ellipsoids.iter().any(|e| !e.density.is_finite() || e.semi_axes.iter().any(|&a| !(a > 0.0))) {
            return Err(Error::Config("phantom ellipsoids need finite density and positive axes".into()));
        }
        Ok(Self { ellipsoids })
    }

    pub fn density_at(&self, x: &Vector3<f64>) -> f64 {
        self.ellipsoids
            .iter()
            .filter(|e| e.contains(x))
            .map(|e| e.density)
            .sum()
    }

    /// Exact line integral along `origin + s · dir`, `dir` of unit length.
    pub fn line_integral(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        self.ellipsoids
            .iter()
            .map(|e| {
                let p = PreparedEllipsoid::new(e);
                p.density * p.chord(origin, dir)
            })
            .sum()
    }

    /// Samples the density on the voxel centers of `grid`.
    pub fn voxelize(&self, grid: &VolumeGrid) -> Volume {
        let mut vol = Volume::zeros(grid.clone());
        let (nx, ny) = (grid.nx, grid.ny);
        vol.data
            .par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(z, slab)| {
                for y in 0..ny {
                    for x in 0..nx {
                        slab[y * nx + x] = self.density_at(&grid.position(x, y, z));
                    }
                }
            });
        vol
    }
}

/// Named phantom presets.
pub fn make_phantom(preset: &str) -> Result<Phantom> {
    let ellipsoids = match preset {
        "single-sphere" => vec![Ellipsoid::sphere([0.0; 3], 4.0, 1.0)],
        "two-spheres" => vec![
            Ellipsoid::sphere([-3.0, 0.0, 0.0], 2.5, 1.0),
            Ellipsoid::sphere([3.0, 1.0, 1.0], 2.0, 1.0),
        ],
        "tibia-like" => tibia_like(),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Phantom::new(ellipsoids)
}

/// Hollow elongated shaft along z with small dense inclusions in and near
/// the cortex.
fn tibia_like() -> Vec<Ellipsoid> {
    let mut parts = vec![
        Ellipsoid {
            center: [0.0, 0.0, 0.0],
            semi_axes: [5.0, 4.6, 7.5],
            rotation_deg: [0.0, 0.0, 12.0],
            density: 1.0,
        },
        Ellipsoid {
            center: [0.2, -0.1, 0.0],
            semi_axes: [3.6, 3.2, 6.8],
            rotation_deg: [0.0, 0.0, 12.0],
            density: -0.7,
        },
    ];
    let inclusions: [(f64, f64, f64); 8] = [
        (0.0, 3.0, -5.0),
        (40.0, 2.2, -3.0),
        (95.0, 3.1, -1.2),
        (150.0, 1.4, 0.4),
        (200.0, 2.8, 1.8),
        (245.0, 3.3, 3.1),
        (290.0, 1.9, 4.6),
        (330.0, 2.6, 5.9),
    ];
    for (angle_deg, radius, z) in inclusions {
        let a = f64::to_radians(angle_deg);
        parts.push(Ellipsoid::sphere([radius * a.cos(), radius * a.sin(), z], 0.45, 0.5));
    }
    parts
}

/// Circular cone-beam scan with a flat detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanGeometry {
    pub n_projections: usize,
    pub angular_range_deg: f64,
    pub source_isocenter_mm: f64,
    pub source_detector_mm: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    pub pixel_pitch_mm: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self {
            n_projections: 60,
            angular_range_deg: 210.0,
            source_isocenter_mm: 60.0,
            source_detector_mm: 100.0,
            detector_rows: 64,
            detector_cols: 96,
            pixel_pitch_mm: 0.5,
        }
    }
}

impl ScanGeometry {
    /// Full fan angle in degrees.
    pub fn fan_angle_deg(&self) -> f64 {
        let half_width = self.detector_cols as f64 * self.pixel_pitch_mm / 2.0;
        2.0 * (half_width / self.source_detector_mm).atan().to_degrees()
    }

    pub fn focal_length_px(&self) -> f64 {
        self.source_detector_mm / self.pixel_pitch_mm
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (
            (self.detector_cols as f64 - 1.0) / 2.0,
            (self.detector_rows as f64 - 1.0) / 2.0,
        )
    }

    /// Source angle of view `i` in radians.
    pub fn view_angle(&self, i: usize) -> f64 {
        if self.n_projections < 2 {
            return 0.0;
        }
        (self.angular_range_deg * i as f64 / (self.n_projections - 1) as f64).to_radians()
    }

    /// Angular spacing between consecutive views in radians.
    pub fn angular_step(&self) -> f64 {
        self.angular_range_deg.to_radians() / (self.n_projections.max(2) - 1) as f64
    }

    /// Radius of the cylindrical field of view at the isocenter.
    pub fn fov_radius(&self) -> f64 {
        self.source_isocenter_mm * (self.fan_angle_deg() / 2.0).to_radians().sin()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if self.n_projections < 2 {
            return bad(format!("need at least 2 projections, got {}", self.n_projections));
        }
        if self.detector_rows == 0 || self.detector_cols == 0 {
            return bad("detector must have at least one row and column".into());
        }
        if !(self.pixel_pitch_mm > 0.0 && self.source_isocenter_mm > 0.0) {
            return bad("distances and pixel pitch must be positive".into());
        }
        if !(self.source_detector_mm > self.source_isocenter_mm) {
            return bad("detector must lie beyond the isocenter".into());
        }
        if !(self.angular_range_deg > 180.0 && self.angular_range_deg < 360.0) {
            return bad(format!(
                "short-scan range must lie in (180, 360) degrees, got {}",
                self.angular_range_deg
            ));
        }
        let needed = 180.0 + self.fan_angle_deg();
        if self.angular_range_deg < needed {
            return bad(format!(
                "short-scan range {} deg is below 180 deg + fan angle = {needed:.3} deg",
                self.angular_range_deg
            ));
        }
        Ok(())
    }
}

/// Projection matrices of a circular trajectory in the `z = 0` plane.
///
/// View `i` has its source at angle `θᵢ` on a circle of radius
/// `source_isocenter_mm`, the detector perpendicular to the central ray, the
/// isocenter on the detector center, detector columns along the trajectory
/// tangent and rows running along `-z`.
pub fn short_scan_trajectory(g: &ScanGeometry) -> Result<Vec<ProjectionMatrix>> {
    g.validate()?;
    let f = g.focal_length_px();
    let (cu, cv) = g.principal_point();
    let k = Matrix3::new(f, 0.0, cu, 0.0, f, cv, 0.0, 0.0, 1.0);
    Ok((0..g.n_projections)
        .map(|i| {
            let (s, c) = g.view_angle(i).sin_cos();
            let source = Vector3::new(c, s, 0.0) * g.source_isocenter_mm;
            let e_u = Vector3::new(-s, c, 0.0);
            let e_v = Vector3::new(0.0, 0.0, -1.0);
            let w = Vector3::new(-c, -s, 0.0);
            let r = Matrix3::from_rows(&[e_u.transpose(), e_v.transpose(), w.transpose()]);
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            rt.set_column(3, &(-(r * source)));
            ProjectionMatrix(k * rt)
        })
        .collect())
}

/// Renders the exact line integrals of `ph` on a `rows × cols` detector.
pub fn forward_project(
    ph: &Phantom,
    p: &ProjectionMatrix,
    rows: usize,
    cols: usize,
    pitch: f64,
) -> Result<ProjectionImage> {
    forward_project_area(ph, p, rows, cols, pitch, 1)
}

/// Pixel values averaged over a `sub × sub` grid of rays spread evenly over
/// each pixel's area. `sub = 1` is the point-sampled [`forward_project`].
pub fn forward_project_area(
    ph: &Phantom,
    p: &ProjectionMatrix,
    rows: usize,
    cols: usize,
    pitch: f64,
    sub: usize,
) -> Result<ProjectionImage> {
    if sub == 0 {
        return Err(Error::Config("supersampling factor must be at least 1".into()));
    }
    let source = crate::geometry::source_position(p)?;
    let origin = Vector3::new(source[0], source[1], source[2]);
    let m_inv = p.normalized().left_block().try_inverse().ok_or(Error::DegenerateMatrix)?;
    let prepared: Vec<PreparedEllipsoid> = ph.ellipsoids.iter().map(PreparedEllipsoid::new).collect();
    let offsets: Vec<f64> = (0..sub).map(|k| (k as f64 + 0.5) / sub as f64 - 0.5).collect();
    let norm = 1.0 / (sub * sub) as f64;
    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        for (c, out) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for dv in &offsets {
                for du in &offsets {
                    let pix = Vector3::new(c as f64 + du, r as f64 + dv, 1.0);
                    let dir = (m_inv * pix).normalize();
                    sum += prepared
                        .iter()
                        .map(|e| e.density * e.chord(&origin, &dir))
                        .sum::<f64>();
                }
            }
            *out = if sub == 1 { sum } else { sum * norm };
        }
    });
    ProjectionImage::new(cols, rows, pitch, data)
}

/// Right-multiplies every matrix by its view's spline motion. Images are
/// left as they are: only the geometry is corrupted.
pub fn inject_motion(ps: &[ProjectionMatrix], spline: &MotionSpline) -> Result<Vec<ProjectionMatrix>> {
    let params = spline.expand(ps.len())?;
    Ok(ps.iter().zip(&params).map(|(p, m)| apply_motion(p, m)).collect())
}

/// Node values drawn uniformly in `±amp_translation_mm` / `±amp_rotation_deg`
/// for the active parameters; inactive rows stay zero.
pub fn random_spline<R: Rng>(
    n_projections: usize,
    n_nodes: usize,
    amp_translation_mm: f64,
    amp_rotation_deg: f64,
    mask: &ScenarioMask,
    rng: &mut R,
) -> Result<MotionSpline> {
    let mut spline = MotionSpline::uniform(n_projections, n_nodes)?;
    // Draw all six rows regardless of the mask so a seed gives the same
    // motion shape in every scenario.
    for (k, row) in spline.node_values.iter_mut().enumerate() {
        let amp = if k < 3 { amp_translation_mm } else { amp_rotation_deg };
        for v in row.iter_mut() {
            let u: f64 = rng.random_range(-1.0..=1.0);
            *v = if mask.active[k] { u * amp } else { 0.0 };
        }
    }
    Ok(spline)
}

/// Averages `factor × factor` pixel blocks.
pub fn bin_image(img: &ProjectionImage, factor: usize) -> Result<ProjectionImage> {
    if factor == 1 {
        return Ok(img.clone());
    }
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::Config(format!(
            "pixel binning factor {factor} must divide the detector size {}x{}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut data = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    sum += img.get(c * factor + dc, r * factor + dr);
                }
            }
            data[r * w + c] = sum * norm;
        }
    }
    ProjectionImage::new(w, h, img.spacing * factor as f64, data)
}

/// Maps a projection matrix to the coordinates of a binned detector.
pub fn bin_matrix(p: &ProjectionMatrix, factor: usize) -> ProjectionMatrix {
    let b = factor as f64;
    let off = -(b - 1.0) / (2.0 * b);
    let s = Matrix3::new(1.0 / b, 0.0, off, 0.0, 1.0 / b, off, 0.0, 0.0, 1.0);
    ProjectionMatrix(s * p.0)
}

/// Grid description of a volume. `origin` is the center of voxel (0, 0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f64,
    pub origin: [f64; 3],
}

impl VolumeGrid {
    /// `n³` voxels of size `spacing`, centered on the isocenter.
    pub fn centered_cube(n: usize, spacing: f64) -> Self {
        let o = -(n as f64 - 1.0) / 2.0 * spacing;
        Self {
            nx: n,
            ny: n,
            nz: n,
            spacing,
            origin: [o; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn position(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + x as f64 * self.spacing,
            self.origin[1] + y as f64 * self.spacing,
            self.origin[2] + z as f64 * self.spacing,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() || !(self.spacing > 0.0) {
            return Err(Error::Config("volume grid needs voxels and positive spacing".into()));
        }
        Ok(())
    }
}

/// Scalar volume, x fastest: index `(z · ny + y) · nx + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: VolumeGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            data: vec![0.0; n],
        }
    }

    pub fn new(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                what: "volume data",
                expected: grid.len(),
                actual: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[(z * self.grid.ny + y) * self.grid.nx + x]
    }

    /// Writes `<stem>.raw` (little-endian f32) and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_json(&stem.with_extension("json"), &self.grid)?;
        write_f32_le(&stem.with_extension("raw"), &self.data)
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let json = stem.with_extension("json");
        if !json.exists() {
            return Err(Error::MissingArtifact {
                path: json,
                hint: "run the reconstruct step first".into(),
            });
        }
        let grid: VolumeGrid = read_json(&json)?;
        grid.validate()?;
        let data = read_f32_le(&stem.with_extension("raw"), grid.len())?;
        Volume::new(grid, data)
    }
}

/// Writes a projection image as raw little-endian f32.
pub fn write_image(path: &Path, img: &ProjectionImage) -> Result<()> {
    write_f32_le(path, &img.data)
}

pub fn read_image(path: &Path, width: usize, height: usize, spacing: f64) -> Result<ProjectionImage> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "projection image missing; re-run simulate".into(),
        });
    }
    ProjectionImage::new(width, height, spacing, read_f32_le(path, width * height)?)
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
