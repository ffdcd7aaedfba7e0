//! Extended object tracking with an extruded B-spline side-view profile,
//! an EKF over pose and shape, and covariance-intersection track fusion.

// Validation writes `!(x > 0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ekf;
pub mod evalkit;
pub mod fusion;
pub mod scalar;
pub mod shape3d;
pub mod simkit;
pub mod splinecore;

pub use scalar::Scalar;

pub type Curve = splinecore::BSplineCurve<f64>;
pub type CurveF32 = splinecore::BSplineCurve<f32>;
pub type State = shape3d::ObjectState<f64>;
pub type StateF32 = shape3d::ObjectState<f32>;
pub type Model = shape3d::ShapeModel<f64>;
pub type ModelF32 = shape3d::ShapeModel<f32>;
pub type Measurement = shape3d::PointMeasurement<f64>;
pub type MeasurementF32 = shape3d::PointMeasurement<f32>;
pub type Estimate = ekf::GaussianEstimate<f64>;
pub type EstimateF32 = ekf::GaussianEstimate<f32>;
pub type EotTracker = ekf::Tracker<f64>;
pub type EotTrackerF32 = ekf::Tracker<f32>;
pub type Fused = fusion::FusionReport<f64>;
pub type FusedF32 = fusion::FusionReport<f32>;
