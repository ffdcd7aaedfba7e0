//! The extruded side-view object model.
//!
//! An object is a planar B-spline profile in its body x-z plane, swept along
//! the body y axis over the width `q` and closed by two planar caps at
//! `y = +-q/2`. The body frame sits at `(x_x, x_y, x_z)` and is rotated by the
//! yaw `psi` about the vertical axis.

mod polygon;
mod surface;

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::scalar::{wrap_angle, Scalar};
use crate::splinecore::SplineError;

pub use polygon::{point_segment_distance, segments_intersect, Polygon};
pub use surface::{
    ShapeModel, SurfaceAssignment, SurfaceContext, SurfaceSample, CAP_MARGIN, DEFAULT_SAMPLES_PER_SPAN,
};

/// Offsets of the state components.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const SPEED: usize = 2;
    pub const YAW: usize = 3;
    pub const TURN_RATE: usize = 4;
    pub const Z: usize = 5;
    pub const VZ: usize = 6;
    pub const WIDTH: usize = 7;
    /// First control point; point `i` occupies `CONTROL + 2i` (x) and `CONTROL + 2i + 1` (z).
    pub const CONTROL: usize = 8;
    pub const MOTION_DIM: usize = 7;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("state vector of length {0} does not hold 8 + 2n entries")]
    BadStateLength(usize),
    #[error("width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("state contains a non-finite entry")]
    NonFinite,
    #[error("shape model expects {expected} control points, state has {got}")]
    ControlCountMismatch { expected: usize, got: usize },
    #[error("need at least 2 samples per knot span, got {0}")]
    TooFewSamples(usize),
    #[error("side-view profile polygon is degenerate or self-intersecting")]
    DegenerateProfile,
}

/// Motion part `[x_x, x_y, v_xy, psi, omega, x_z, v_z]` followed by the extent
/// `[q, c1x, c1z, ..., cnx, cnz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState<T: Scalar = f64> {
    vector: DVector<T>,
}

impl<T: Scalar> ObjectState<T> {
    pub fn new(motion: [T; 7], width: T, control_points: &[Vector2<T>]) -> Result<Self, ShapeError> {
        let mut v = DVector::zeros(idx::CONTROL + 2 * control_points.len());
        for (i, m) in motion.iter().enumerate() {
            v[i] = *m;
        }
        v[idx::WIDTH] = width;
        for (i, c) in control_points.iter().enumerate() {
            v[idx::CONTROL + 2 * i] = c.x;
            v[idx::CONTROL + 2 * i + 1] = c.y;
        }
        Self::from_vector(v)
    }

    /// Validates the layout, requires `q > 0` and wraps the yaw.
    pub fn from_vector(mut vector: DVector<T>) -> Result<Self, ShapeError> {
        let len = vector.len();
        if len < idx::CONTROL || !(len - idx::CONTROL).is_multiple_of(2) {
            return Err(ShapeError::BadStateLength(len));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite);
        }
        if vector[idx::WIDTH] <= T::zero() {
            return Err(ShapeError::NonPositiveWidth(vector[idx::WIDTH].as_f64()));
        }
        vector[idx::YAW] = wrap_angle(vector[idx::YAW]);
        Ok(Self { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn control_count(&self) -> usize {
        (self.vector.len() - idx::CONTROL) / 2
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.vector
    }

    pub fn into_vector(self) -> DVector<T> {
        self.vector
    }

    pub fn position(&self) -> Vector3<T> {
        Vector3::new(self.vector[idx::X], self.vector[idx::Y], self.vector[idx::Z])
    }

    pub fn speed(&self) -> T {
        self.vector[idx::SPEED]
    }

    pub fn yaw(&self) -> T {
        self.vector[idx::YAW]
    }

    pub fn turn_rate(&self) -> T {
        self.vector[idx::TURN_RATE]
    }

    pub fn vertical_speed(&self) -> T {
        self.vector[idx::VZ]
    }

    pub fn width(&self) -> T {
        self.vector[idx::WIDTH]
    }

    pub fn control_point(&self, i: usize) -> Vector2<T> {
        Vector2::new(self.vector[idx::CONTROL + 2 * i], self.vector[idx::CONTROL + 2 * i + 1])
    }

    pub fn control_points(&self) -> Vec<Vector2<T>> {
        (0..self.control_count()).map(|i| self.control_point(i)).collect()
    }

    /// Same pose and extent with a new position.
    pub fn with_position(&self, p: &Vector3<T>) -> Self {
        let mut s = self.clone();
        s.vector[idx::X] = p.x;
        s.vector[idx::Y] = p.y;
        s.vector[idx::Z] = p.z;
        s
    }

    pub fn with_yaw(&self, yaw: T) -> Self {
        let mut s = self.clone();
        s.vector[idx::YAW] = wrap_angle(yaw);
        s
    }

    /// Rotation from body to global coordinates.
    pub fn rotation(&self) -> Matrix3<T> {
        yaw_rotation(self.yaw())
    }

    pub fn to_body(&self, point: &Vector3<T>) -> Vector3<T> {
        self.rotation().transpose() * (point - self.position())
    }

    pub fn to_global(&self, body_point: &Vector3<T>) -> Vector3<T> {
        self.rotation() * body_point + self.position()
    }
}

/// Rotation by `yaw` about the vertical axis.
pub fn yaw_rotation<T: Scalar>(yaw: T) -> Matrix3<T> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, T::zero(), s, c, T::zero(), T::zero(), T::zero(), T::one())
}

/// A 3D point with its additive Gaussian noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasurement<T: Scalar = f64> {
    pub position: Vector3<T>,
    pub noise: Matrix3<T>,
}

impl<T: Scalar> PointMeasurement<T> {
    pub fn new(position: Vector3<T>, noise: Matrix3<T>) -> Self {
        Self { position, noise }
    }

    /// Independent per-axis noise with the given standard deviations.
    pub fn with_std(position: Vector3<T>, std: Vector3<T>) -> Self {
        Self {
            position,
            noise: Matrix3::from_diagonal(&std.component_mul(&std)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn box_points() -> Vec<Vector2<f64>> {
        vec![Vector2::new(-1.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(1.0, 0.0), Vector2::new(1.0, -1.0)]
    }

    #[test]
    fn identity_pose_leaves_points() {
        let s = ObjectState::new([0.0; 7], 2.0, &box_points()).unwrap();
        let p = Vector3::new(1.0, -2.0, 0.5);
        assert_eq!(s.to_body(&p), p);
    }

    #[test]
    fn quarter_turn_maps_position_to_origin() {
        let s = ObjectState::new([1.0, 2.0, 0.0, FRAC_PI_2, 0.0, 3.0, 0.0], 2.0, &box_points()).unwrap();
        assert!(s.to_body(&Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-15);
        // Global +y is body +x after a quarter turn.
        let b = s.to_body(&Vector3::new(1.0, 3.0, 3.0));
        assert!((b - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn layout_checks() {
        assert_eq!(ObjectState::<f64>::from_vector(DVector::zeros(9)), Err(ShapeError::BadStateLength(9)));
        let mut v = DVector::zeros(10);
        assert!(matches!(ObjectState::from_vector(v.clone()), Err(ShapeError::NonPositiveWidth(_))));
        v[idx::WIDTH] = 1.0;
        v[idx::YAW] = 7.0;
        let s = ObjectState::from_vector(v).unwrap();
        assert!((s.yaw() - (7.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert_eq!(s.control_count(), 1);
        assert_eq!(s.dim(), 28 - 18);
    }

    #[test]
    fn state_dimension_for_ten_points() {
        let pts = vec![Vector2::new(0.0, 0.0); 10];
        assert_eq!(ObjectState::new([0.0; 7], 2.0, &pts).unwrap().dim(), 28);
    }
}
