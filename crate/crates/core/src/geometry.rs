//! Rigid-body math: rotations, poses, distances and the averaging used by the
//! pose buffer.
//!
//! Rotations are unit quaternions. `q` and `-q` represent the same rotation and
//! compare equal; the `w >= 0` hemisphere is only enforced when a rotation is
//! serialized.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, SymmetricEigen, Unit, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no samples to average")]
    EmptyInput,
    #[error("{samples} samples but {weights} weights")]
    LengthMismatch { samples: usize, weights: usize },
    #[error("weights must be nonnegative with a positive sum")]
    InvalidWeights,
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
}

/// A 3D rotation stored as a unit quaternion.
#[derive(Clone, Copy, Debug)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw quaternion components, normalizing them.
    /// Components already unit within a few ulps are kept bit-exact.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(GeometryError::ZeroQuaternion);
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Rotation(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Rotation(UnitQuaternion::new_unchecked(q / n)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q).renormalized()
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        match Unit::try_new(*axis, 1e-15) {
            Some(a) => Rotation(UnitQuaternion::from_axis_angle(&a, angle)),
            None => Rotation::identity(),
        }
    }

    /// Rotation vector (axis times angle) to rotation.
    pub fn from_scaled_axis(v: &Vec3) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(*v))
    }

    /// Closed-form conversion; `m` must already be orthonormal. The iterative
    /// nalgebra solver can stall near half-turns.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))).renormalized()
    }

    /// Rotation whose columns are the given orthonormal axes.
    pub fn from_basis(x: &Vec3, y: &Vec3, z: &Vec3) -> Self {
        Self::from_matrix(&Matrix3::from_columns(&[*x, *y, *z]))
    }

    /// Components as `[w, x, y, z]`, sign as stored.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Components as `[w, x, y, z]` on the `w >= 0` hemisphere.
    pub fn canonical_wxyz(&self) -> [f64; 4] {
        let c = self.wxyz();
        if c[0] < 0.0 || (c[0] == 0.0 && (c[1], c[2], c[3]) < (0.0, 0.0, 0.0)) {
            [-c[0], -c[1], -c[2], -c[3]]
        } else {
            c
        }
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0.transform_vector(v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// Axis times angle, angle in `[0, pi]`.
    pub fn scaled_axis(&self) -> Vec3 {
        let q = self.0.quaternion();
        let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
        let s = v.norm();
        if s < 1e-15 {
            return v * 2.0;
        }
        v * (2.0 * s.atan2(w) / s)
    }

    pub fn negated(&self) -> Self {
        Rotation(UnitQuaternion::new_unchecked(-self.0.into_inner()))
    }

    fn renormalized(self) -> Self {
        let q = self.0.into_inner();
        Rotation(UnitQuaternion::new_unchecked(q / q.norm()))
    }

    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        angular_distance(self, other) <= tol
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        let a = self.0.quaternion().coords;
        let b = other.0.quaternion().coords;
        a == b || a == -b
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0).renormalized()
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.rotate(&v)
    }
}

/// Geodesic distance between two rotations in radians, in `[0, pi]`.
///
/// Equal to `acos((tr(Ra * Rb^T) - 1) / 2)`, evaluated through the relative
/// quaternion for accuracy near zero.
pub fn angular_distance(a: &Rotation, b: &Rotation) -> f64 {
    let rel = a.0.inverse() * b.0;
    let q = rel.quaternion();
    (2.0 * q.imag().norm().atan2(q.w.abs())).clamp(0.0, std::f64::consts::PI)
}

fn check_weights(n: usize, weights: &[f64]) -> Result<(), GeometryError> {
    if n == 0 {
        return Err(GeometryError::EmptyInput);
    }
    if weights.len() != n {
        return Err(GeometryError::LengthMismatch { samples: n, weights: weights.len() });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(sum > 0.0) {
        return Err(GeometryError::InvalidWeights);
    }
    Ok(())
}

/// Weighted chordal mean: dominant eigenvector of `sum w_i q_i q_i^T`.
pub fn average_rotations(samples: &[Rotation], weights: &[f64]) -> Result<Rotation, GeometryError> {
    check_weights(samples.len(), weights)?;
    if samples.len() == 1 {
        return Ok(samples[0]);
    }
    let mut m = Matrix4::<f64>::zeros();
    for (r, w) in samples.iter().zip(weights) {
        let c = r.0.quaternion().coords;
        m += c * c.transpose() * *w;
    }
    let eig = SymmetricEigen::new(m);
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let v: Vector4<f64> = eig.eigenvectors.column(best).into_owned();
    // nalgebra stores quaternion coords as (i, j, k, w)
    let q = Quaternion::new(v[3], v[0], v[1], v[2]);
    let mut out = Rotation(UnitQuaternion::new_unchecked(q / q.norm()));
    // Keep the sign of the first sample's hemisphere; the rotation is unaffected.
    if out.0.quaternion().coords.dot(&samples[0].0.quaternion().coords) < 0.0 {
        out = out.negated();
    }
    Ok(out)
}

/// Weighted arithmetic mean of 3-vectors.
pub fn average_translations(samples: &[Vec3], weights: &[f64]) -> Result<Vec3, GeometryError> {
    check_weights(samples.len(), weights)?;
    let sum: f64 = weights.iter().sum();
    let acc = samples.iter().zip(weights).fold(Vec3::zeros(), |acc, (v, w)| acc + v * *w);
    Ok(acc / sum)
}

/// Rigid transform: `x -> rotation * x + translation`.
///
/// Serialized as `[qw, qx, qy, qz, tx, ty, tz]` with `qw >= 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose { rotation: Rotation::identity(), translation: t }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose { rotation: r, translation: -(r.rotate(&self.translation)) }
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.canonical_wxyz();
        let t = self.translation;
        [q[0], q[1], q[2], q[3], t.x, t.y, t.z]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Pose, GeometryError> {
        Ok(Pose {
            rotation: Rotation::from_wxyz(a[0], a[1], a[2], a[3])?,
            translation: Vec3::new(a[4], a[5], a[6]),
        })
    }

    /// Rotation angle and translation distance between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (angular_distance(&self.rotation, &other.rotation), (self.translation - other.translation).norm())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl From<Pose> for [f64; 7] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 7]> for Pose {
    type Error = GeometryError;
    fn try_from(a: [f64; 7]) -> Result<Self, Self::Error> {
        Pose::from_array(a)
    }
}

/// Any unit vector orthogonal to `v` (deterministic).
pub fn any_orthogonal(v: &Vec3) -> Vec3 {
    let a = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vec3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&a).normalize()
}

/// Rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Rotation {
    match UnitQuaternion::rotation_between(from, to) {
        Some(q) => Rotation(q),
        None => Rotation::from_axis_angle(&any_orthogonal(from), std::f64::consts::PI),
    }
}
