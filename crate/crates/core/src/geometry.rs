//! Rigid-alignment and SO(3) primitives.
//!
//! Everything here is a pure function on immutable values. Joint sets are
//! 21 ordered 3D points in millimeters with the wrist at index 0; rotations
//! are validated 3x3 matrices with `det = +1`.

use std::ops::Index;

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of hand joints.
pub const NUM_JOINTS: usize = 21;

/// Index of the root joint.
pub const WRIST: usize = 0;

/// Tolerance on `RᵀR = I` and `det R = 1` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Covariances whose second singular value falls below this are rejected by
/// [`kabsch_rotation`]: the rotation is not identifiable from collinear points.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// 21 ordered 3D joints of one hand in one camera frame (mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSet(Vec<Vector3<f64>>);

impl JointSet {
    /// Builds a joint set, rejecting wrong counts and non-finite coordinates.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        let set = Self::from_points_unchecked(points)?;
        set.check_finite()?;
        Ok(set)
    }

    /// Builds a joint set checking only the joint count.
    pub fn from_points_unchecked(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_JOINTS} joints, got {}",
                points.len()
            )));
        }
        Ok(Self(points))
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Vector3::from(*p)).collect())
    }

    /// All joints at the origin.
    pub fn zeros() -> Self {
        Self(vec![Vector3::zeros(); NUM_JOINTS])
    }

    /// Every joint at the same point.
    pub fn constant(p: Vector3<f64>) -> Self {
        Self(vec![p; NUM_JOINTS])
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn points_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.0
    }

    pub fn wrist(&self) -> Vector3<f64> {
        self.0[WRIST]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            Some(k) => Err(Error::InvalidInput(format!(
                "joint {k} has a non-finite coordinate"
            ))),
            None => Ok(()),
        }
    }

    /// Joints relative to the wrist. Infallible counterpart of [`wrist_align`].
    pub fn aligned(&self) -> JointSet {
        let w = self.wrist();
        JointSet(self.0.iter().map(|p| p - w).collect())
    }

    /// True when the wrist sits at the origin (within `tol` mm per coordinate).
    pub fn is_wrist_aligned(&self, tol: f64) -> bool {
        self.wrist().iter().all(|c| c.abs() <= tol)
    }

    /// Applies `f` to every joint.
    pub fn map(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> JointSet {
        JointSet(self.0.iter().map(f).collect())
    }

    /// Applies `f` to corresponding joints of `self` and `other`.
    pub fn zip_map(
        &self,
        other: &JointSet,
        f: impl Fn(&Vector3<f64>, &Vector3<f64>) -> Vector3<f64>,
    ) -> JointSet {
        JointSet(self.0.iter().zip(&other.0).map(|(a, b)| f(a, b)).collect())
    }

    pub fn translate(&self, t: &Vector3<f64>) -> JointSet {
        self.map(|p| p + t)
    }

    /// Rotates every joint about the origin.
    pub fn rotate(&self, r: &Rotation) -> JointSet {
        self.map(|p| r.matrix() * p)
    }

    /// Rotates every joint by `rᵀ`.
    pub fn rotate_inverse(&self, r: &Rotation) -> JointSet {
        let rt = r.matrix().transpose();
        self.map(|p| rt * p)
    }

    /// Sum of squared coordinate differences.
    pub fn squared_distance(&self, other: &JointSet) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }

    /// Largest per-joint Euclidean distance.
    pub fn max_joint_distance(&self, other: &JointSet) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Flattened joint coordinates, joint-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 3 * NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {}",
                3 * NUM_JOINTS,
                values.len()
            )));
        }
        Self::from_points_unchecked(
            values
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }
}

impl Index<usize> for JointSet {
    type Output = Vector3<f64>;

    fn index(&self, k: usize) -> &Vector3<f64> {
        &self.0[k]
    }
}

/// A proper rotation in SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts `m` if it is orthogonal with unit determinant to within
    /// [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput(
                "rotation has non-finite entries".into(),
            ));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "not a proper rotation: |RᵀR - I| = {ortho:.3e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Rodrigues' formula. A zero axis yields the identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let u = axis / n;
        let k = u.cross_matrix();
        Self(Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
    }

    /// Rotation by the vector's norm about its direction.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `self · other`.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation vector (axis scaled by angle), robust near 0 and π.
    pub fn to_rotation_vector(&self) -> Vector3<f64> {
        let m = &self.0;
        let skew = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        let angle = angle_of(m);
        let s = skew.norm();
        if s > 1e-6 {
            return skew / s * angle;
        }
        if angle < 1e-3 {
            return skew * 0.5;
        }
        // Near π the axis comes from the symmetric part.
        let b = (m + Matrix3::identity()) * 0.5;
        let (col, _) = (0..3)
            .map(|i| (i, b[(i, i)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let axis = b.column(col).into_owned().normalize();
        let axis = if axis.dot(&skew) < 0.0 { -axis } else { axis };
        axis * angle
    }

    /// Residual of the rotation invariants: (`|RᵀR - I|_F`, `|det R - 1|`).
    pub fn invariant_residuals(&self) -> (f64, f64) {
        (
            (self.0.transpose() * self.0 - Matrix3::identity()).norm(),
            (self.0.determinant() - 1.0).abs(),
        )
    }
}

/// Rotation angle of a (near-)rotation matrix via `atan2(|vee(skew)|, (tr - 1)/2)`.
fn angle_of(m: &Matrix3<f64>) -> f64 {
    let sin_axis = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5;
    let cos = (m.trace() - 1.0) * 0.5;
    sin_axis.norm().atan2(cos).clamp(0.0, std::f64::consts::PI)
}

/// Subtracts the wrist from every joint.
pub fn wrist_align(joints: &JointSet) -> Result<JointSet> {
    joints.check_finite()?;
    Ok(joints.aligned())
}

/// Cross-covariance `Σ a_k b_kᵀ` of two wrist-aligned joint sets.
pub fn cross_covariance(a: &JointSet, b: &JointSet) -> Matrix3<f64> {
    a.points()
        .iter()
        .zip(b.points())
        .fold(Matrix3::zeros(), |acc, (p, q)| acc + p * q.transpose())
}

/// Rotation `R` maximizing `tr(Rᵀ Hᵀ)`, i.e. minimizing `Σ |R a_k - b_k|²` for
/// `H = Σ a_k b_kᵀ`.
///
/// Reflections are removed by flipping the direction of the smallest singular
/// value.
pub fn rotation_from_covariance(h: &Matrix3<f64>) -> Result<Rotation> {
    if !h.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput(
            "covariance has non-finite entries".into(),
        ));
    }
    let svd = SVD::new(*h, true, true);
    let s = svd.singular_values;
    if s[1] < DEGENERACY_THRESHOLD {
        return Err(Error::Degenerate(format!(
            "cross-covariance singular values {:.3e}, {:.3e}, {:.3e}",
            s[0], s[1], s[2]
        )));
    }
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(Rotation::from_matrix_unchecked(v * d * u.transpose()))
}

/// Least-squares rotation taking the wrist-aligned `a` onto the wrist-aligned `b`.
pub fn kabsch_rotation(a: &JointSet, b: &JointSet) -> Result<Rotation> {
    let a = wrist_align(a)?;
    let b = wrist_align(b)?;
    rotation_from_covariance(&cross_covariance(&a, &b))
}

/// Nearest rotation (Frobenius) to an arbitrary 3x3 matrix.
///
/// Fails when the matrix is rank deficient, since the projection is then
/// ambiguous.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    if !m.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let svd = SVD::new(*m, true, true);
    let s = svd.singular_values;
    if s[0] == 0.0 || s[2] <= 1e-12 * s[0] {
        return Err(Error::DegenerateMean([s[0], s[1], s[2]]));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(Rotation::from_matrix_unchecked(u * d * v_t))
}

/// Chordal L2 mean: the (weighted) arithmetic mean of the matrices projected
/// back onto SO(3).
///
/// Weights must be nonnegative and sum to one; `None` means uniform.
pub fn so3_mean(rotations: &[Rotation], weights: Option<&[f64]>) -> Result<Rotation> {
    if rotations.is_empty() {
        return Err(Error::InvalidInput(
            "cannot average an empty rotation list".into(),
        ));
    }
    let sum = match weights {
        None => {
            rotations
                .iter()
                .fold(Matrix3::zeros(), |acc, r| acc + r.matrix())
                / rotations.len() as f64
        }
        Some(w) => {
            if w.len() != rotations.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} weights for {} rotations",
                    w.len(),
                    rotations.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidParameter(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "weights sum to {total}, expected 1"
                )));
            }
            rotations
                .iter()
                .zip(w)
                .fold(Matrix3::zeros(), |acc, (r, wi)| acc + r.matrix() * *wi)
        }
    };
    project_to_so3(&sum)
}

/// Geodesic distance on SO(3) in radians, in `[0, π]`.
///
/// Equal to `arccos((tr(r1ᵀ r2) - 1) / 2)`; evaluated through `atan2` so that
/// small angles keep full precision.
pub fn geodesic_angle(r1: &Rotation, r2: &Rotation) -> f64 {
    angle_of(&(r1.matrix().transpose() * r2.matrix()))
}

/// Chordal distance `|r1 - r2|_F`.
pub fn frobenius_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    (r1.matrix() - r2.matrix()).norm()
}
