//! Projective and rigid-body algebra for cone-beam geometries.
//!
//! World coordinates are millimeters, detector coordinates are pixels with
//! pixel `(c, r)` centered at `(u, v) = (c, r)`. Rigid motion is applied on
//! the world side of a projection matrix (`P · T`), so a corrupted geometry
//! is recovered by right-multiplying with the inverse transform.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3×4 matrix mapping homogeneous world points (mm) to homogeneous detector
/// points (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn from_row_slice(m: &[f64; 12]) -> Self {
        Self(Matrix3x4::from_row_slice(m))
    }

    pub fn to_row_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[4 * r + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Left 3×3 block.
    pub fn left_block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Projects a world point to detector pixels. `None` when the point lies
    /// on the principal plane.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        let h = self.0 * x.push(1.0);
        if h[2].abs() < f64::MIN_POSITIVE {
            None
        } else {
            Some((h[0] / h[2], h[1] / h[2]))
        }
    }

    /// Rescales so that the third row of the left block has unit norm and
    /// that block has positive determinant. The third homogeneous coordinate
    /// of a projected point is then its depth along the principal axis.
    pub fn normalized(&self) -> Self {
        let m = self.left_block();
        let norm = m.row(2).norm();
        let sign = if m.determinant() < 0.0 { -1.0 } else { 1.0 };
        if norm == 0.0 {
            return *self;
        }
        Self(self.0 * (sign / norm))
    }
}

impl Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjectionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = <[f64; 12]>::deserialize(d)?;
        Ok(Self::from_row_slice(&m))
    }
}

/// Six rigid-motion parameters: translations in millimeters, rotations in
/// degrees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl RigidParams {
    pub const ZERO: RigidParams = RigidParams {
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
        rx: 0.0,
        ry: 0.0,
        rz: 0.0,
    };

    /// Order: tx, ty, tz, rx, ry, rz.
    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            tz: a[2],
            rx: a[3],
            ry: a[4],
            rz: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(
            self.rx.to_radians(),
            self.ry.to_radians(),
            self.rz.to_radians(),
        )
    }

    /// Parameters of the exact inverse transform.
    pub fn inverse(&self) -> RigidParams {
        let r_inv = self.rotation().inverse();
        let t = -(r_inv * Vector3::new(self.tx, self.ty, self.tz));
        let (rx, ry, rz) = r_inv.euler_angles();
        RigidParams {
            tx: t.x,
            ty: t.y,
            tz: t.z,
            rx: rx.to_degrees(),
            ry: ry.to_degrees(),
            rz: rz.to_degrees(),
        }
    }
}

/// `T = Trans(tx, ty, tz) · Rz(rz) · Ry(ry) · Rx(rx)`.
pub fn compose_rigid(p: &RigidParams) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(p.rotation().matrix());
    t[(0, 3)] = p.tx;
    t[(1, 3)] = p.ty;
    t[(2, 3)] = p.tz;
    t
}

/// Right-multiplies `P` by the rigid transform of `p`.
pub fn apply_motion(p_mat: &ProjectionMatrix, p: &RigidParams) -> ProjectionMatrix {
    if *p == RigidParams::ZERO {
        return *p_mat;
    }
    ProjectionMatrix(p_mat.0 * compose_rigid(p))
}

/// Null space of `P`: the homogeneous source position.
///
/// Computed from the four signed 3×3 minors. Finite sources are normalized
/// to a unit last component; sources at infinity to unit length.
pub fn source_position(p: &ProjectionMatrix) -> Result<Vector4<f64>> {
    let m = &p.0;
    let minor = |skip: usize| {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        Matrix3::from_fn(|r, c| m[(r, cols[c])]).determinant()
    };
    let c = Vector4::new(minor(0), -minor(1), minor(2), -minor(3));
    let scale = m.norm().powi(3);
    let norm = c.norm();
    if !(norm > 1e-12 * scale) {
        return Err(Error::DegenerateMatrix);
    }
    if c[3].abs() > 1e-12 * norm {
        Ok(c / c[3])
    } else {
        Ok(c / norm)
    }
}

fn dehomogenize(c: &Vector4<f64>) -> Vector3<f64> {
    Vector3::new(c[0] / c[3], c[1] / c[3], c[2] / c[3])
}

/// A plane containing both sources of a projection pair, at rotation angle
/// `kappa` about the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarPlane {
    /// Plane coefficients with a unit-length normal.
    pub e: Vector4<f64>,
    pub kappa: f64,
}

/// The pencil of planes through a baseline.
///
/// `kappa = 0` is the plane whose normal is the world z axis projected onto
/// the plane orthogonal to the baseline (for a circular trajectory in
/// `z = 0`, the trajectory plane itself).
#[derive(Debug, Clone, Copy)]
pub struct EpipolarPencil {
    pub c0: Vector3<f64>,
    pub c1: Vector3<f64>,
    pub baseline: Vector3<f64>,
    /// Normal at `kappa = 0`.
    pub n0: Vector3<f64>,
    /// Normal at `kappa = π/2`.
    pub n1: Vector3<f64>,
    e0: Vector4<f64>,
    e1: Vector4<f64>,
}

impl EpipolarPencil {
    pub fn new(c0: &Vector4<f64>, c1: &Vector4<f64>) -> Result<Self> {
        if c0[3].abs() < 1e-300 || c1[3].abs() < 1e-300 {
            return Err(Error::DegenerateBaseline(f64::INFINITY));
        }
        let (a, b) = (dehomogenize(c0), dehomogenize(c1));
        let d = b - a;
        let len = d.norm();
        if !(len >= 1e-9) {
            return Err(Error::DegenerateBaseline(len));
        }
        let baseline = d / len;
        let mut reference = Vector3::z();
        if baseline.cross(&reference).norm() < 1e-6 {
            reference = Vector3::x();
        }
        let n0 = (reference - baseline * baseline.dot(&reference)).normalize();
        let n1 = baseline.cross(&n0);
        let plane = |n: &Vector3<f64>| Vector4::new(n.x, n.y, n.z, -n.dot(&a));
        Ok(Self {
            c0: a,
            c1: b,
            baseline,
            n0,
            n1,
            e0: plane(&n0),
            e1: plane(&n1),
        })
    }

    pub fn plane(&self, kappa: f64) -> EpipolarPlane {
        let (s, c) = kappa.sin_cos();
        EpipolarPlane {
            e: self.e0 * c + self.e1 * s,
            kappa,
        }
    }

    /// Basis planes at `kappa = 0` and `kappa = π/2`; every plane of the
    /// pencil is `cos κ · e0 + sin κ · e1`.
    pub fn basis(&self) -> (Vector4<f64>, Vector4<f64>) {
        (self.e0, self.e1)
    }

    /// Angle of the pencil plane containing the world direction `d` from the
    /// first source, folded into `(-π/2, π/2]`.
    pub fn kappa_of_direction(&self, d: &Vector3<f64>) -> f64 {
        let n = self.baseline.cross(d);
        let k = n.dot(&self.n1).atan2(n.dot(&self.n0));
        fold_half_turn(k)
    }
}

/// Folds an angle into `(-π/2, π/2]`.
pub(crate) fn fold_half_turn(k: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut k = k.rem_euclid(PI);
    if k > FRAC_PI_2 {
        k -= PI;
    }
    k
}

pub fn epipolar_plane(c0: &Vector4<f64>, c1: &Vector4<f64>, kappa: f64) -> Result<EpipolarPlane> {
    Ok(EpipolarPencil::new(c0, c1)?.plane(kappa))
}

/// A detector line `l · (u, v, 1) = 0` with its Hessian normal form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    pub l: Vector3<f64>,
    /// Normal angle in `[0, π)`.
    pub alpha: f64,
    /// Signed distance to the coordinate origin.
    pub t: f64,
}

impl Line2D {
    pub fn new(l: Vector3<f64>) -> Result<Self> {
        let (alpha, t) = line_to_hessian(&l)?;
        Ok(Self { l, alpha, t })
    }

    /// The same line expressed in coordinates whose origin is `(cx, cy)`.
    pub fn recentered(&self, cx: f64, cy: f64) -> Result<Self> {
        Self::new(recenter_line(&self.l, cx, cy))
    }
}

pub(crate) fn recenter_line(l: &Vector3<f64>, cx: f64, cy: f64) -> Vector3<f64> {
    Vector3::new(l[0], l[1], l[2] + l[0] * cx + l[1] * cy)
}

/// Image of a plane through the source of `P`: `l = (P Pᵀ)⁻¹ P E`, which
/// satisfies `Pᵀ l = E` for every plane containing the source.
pub fn plane_to_line(p: &ProjectionMatrix, plane: &EpipolarPlane) -> Result<Line2D> {
    let back = line_operator(p).ok_or(Error::DegenerateMatrix)?;
    Line2D::new(back * plane.e)
}

/// `(P Pᵀ)⁻¹ P`, the transpose of the pseudo-inverse of `P`.
pub(crate) fn line_operator(p: &ProjectionMatrix) -> Option<Matrix3x4<f64>> {
    let m = &p.0;
    let ppt = m * m.transpose();
    ppt.try_inverse().map(|inv| inv * m)
}

/// `(alpha, t)` with `cos α · x + sin α · y = t` on the line, `α ∈ [0, π)`.
pub fn line_to_hessian(l: &Vector3<f64>) -> Result<(f64, f64)> {
    use std::f64::consts::PI;
    let s = l[0].hypot(l[1]);
    if !(s > 1e-12 * l.norm()) || s == 0.0 {
        return Err(Error::LineAtInfinity);
    }
    let mut alpha = l[1].atan2(l[0]);
    let mut t = -l[2] / s;
    if alpha < 0.0 {
        alpha += PI;
        t = -t;
    }
    if alpha >= PI {
        alpha -= PI;
        t = -t;
    }
    Ok((alpha, t))
}
