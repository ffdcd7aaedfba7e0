//! Extended Kalman filter over the extruded-profile state.
//!
//! Prediction uses a constant turn rate and velocity model in the ground
//! plane, constant velocity vertically and a slow random walk on the extent.
//! Correction processes point measurements one at a time as implicit
//! pseudo-measurements of zero.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_angle, Scalar};
use crate::shape3d::{idx, ObjectState, PointMeasurement, ShapeError, ShapeModel, SurfaceAssignment};

/// Below this `|omega * dt / 2|` the sinc terms use their Taylor series.
const SINC_SERIES_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkfError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("update called with an empty measurement batch")]
    EmptyBatch,
    #[error("covariance is {got}x{got}, state has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitError {
    #[error("need at least {need} points to start a track, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Mean, covariance and time of a state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate<T: Scalar = f64> {
    pub mean: ObjectState<T>,
    pub covariance: DMatrix<T>,
    pub timestamp: T,
}

impl<T: Scalar> GaussianEstimate<T> {
    pub fn new(mean: ObjectState<T>, covariance: DMatrix<T>, timestamp: T) -> Result<Self, EkfError> {
        if covariance.nrows() != mean.dim() || covariance.ncols() != mean.dim() {
            return Err(EkfError::DimensionMismatch {
                expected: mean.dim(),
                got: covariance.nrows(),
            });
        }
        Ok(Self {
            mean,
            covariance,
            timestamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// Smallest eigenvalue of the symmetrized covariance.
    pub fn min_eigenvalue(&self) -> T {
        let sym = symmetrized(&self.covariance);
        sym.symmetric_eigenvalues().min()
    }

    pub fn is_psd(&self, tolerance: T) -> bool {
        self.min_eigenvalue() >= -tolerance
    }
}

pub fn symmetrized<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Process noise intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoiseConfig<T: Scalar = f64> {
    /// Longitudinal acceleration std (m/s^2).
    pub accel_std: T,
    /// Yaw acceleration std (rad/s^2).
    pub yaw_accel_std: T,
    /// Vertical acceleration std (m/s^2).
    pub vertical_accel_std: T,
    /// Random-walk variance rate of width and control points (m^2/s).
    pub shape_random_walk: T,
}

impl<T: Scalar> Default for ProcessNoiseConfig<T> {
    fn default() -> Self {
        Self {
            accel_std: T::lit(1.5),
            yaw_accel_std: T::lit(1.0),
            vertical_accel_std: T::lit(0.2),
            shape_random_walk: T::lit(1e-4),
        }
    }
}

impl<T: Scalar> ProcessNoiseConfig<T> {
    pub fn is_valid(&self) -> bool {
        [self.accel_std, self.yaw_accel_std, self.vertical_accel_std, self.shape_random_walk]
            .iter()
            .all(|v| *v >= T::zero())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateConfig<T: Scalar = f64> {
    /// Measurements whose Mahalanobis distance exceeds this are skipped.
    pub gate_sigma: T,
    /// Lower bound enforced on the width after each batch (m).
    pub min_width: T,
    /// Relinearization passes after the first sequential sweep.
    pub iterations: usize,
    /// Iteration stops once the mean moves less than this between passes.
    pub tolerance: T,
    /// Isotropic std added to every point's noise to absorb model error (m).
    pub model_noise_std: T,
    /// Skip extrusion matches whose nearest curve parameter is clamped to an
    /// end of the open profile; such points lie beyond the curve and would
    /// drag its endpoints.
    pub skip_profile_ends: bool,
}

impl<T: Scalar> Default for UpdateConfig<T> {
    fn default() -> Self {
        Self {
            gate_sigma: T::lit(3.0),
            min_width: T::lit(0.05),
            iterations: 3,
            tolerance: T::lit(1e-6),
            model_noise_std: T::lit(0.2),
            skip_profile_ends: true,
        }
    }
}

/// Track start parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig<T: Scalar = f64> {
    pub min_points: usize,
    /// Planar position variance.
    pub position_var: T,
    pub vertical_var: T,
    pub speed_var: T,
    pub yaw_var: T,
    pub turn_rate_var: T,
    pub vertical_speed_var: T,
    /// Kept tight: with only one cap in view, width and lateral position
    /// trade off freely.
    pub width_var: T,
    pub shape_var: T,
    /// Lower bounds on the extent fitted to the point cloud (m).
    pub min_length: T,
    pub min_height: T,
    pub min_width: T,
    /// Profile template in `[-1, 1]^2`, scaled onto the point bounding box.
    pub template: Vec<[T; 2]>,
}

impl<T: Scalar> Default for InitConfig<T> {
    fn default() -> Self {
        let template = [
            (-1.0, -1.0),
            (-1.0, -0.2),
            (-1.0, 0.6),
            (-0.7, 1.0),
            (-0.25, 1.0),
            (0.25, 1.0),
            (0.7, 1.0),
            (1.0, 0.6),
            (1.0, -0.2),
            (1.0, -1.0),
        ]
        .iter()
        .map(|&(x, z)| [T::lit(x), T::lit(z)])
        .collect();
        let yaw_std = T::lit(30.0f64.to_radians());
        Self {
            min_points: 10,
            position_var: T::one(),
            vertical_var: T::lit(0.01),
            speed_var: T::lit(25.0),
            yaw_var: yaw_std * yaw_std,
            turn_rate_var: T::lit(0.25),
            vertical_speed_var: T::lit(0.25),
            width_var: T::lit(0.01),
            shape_var: T::lit(0.1),
            min_length: T::one(),
            min_height: T::lit(0.5),
            min_width: T::one(),
            template,
        }
    }
}

/// `sin(a) / a` and its derivative.
fn sinc<T: Scalar>(a: T) -> (T, T) {
    if a.abs() < T::lit(SINC_SERIES_LIMIT) {
        let a2 = a * a;
        let value = T::one() - a2 / T::lit(6.0) + a2 * a2 / T::lit(120.0) - a2 * a2 * a2 / T::lit(5040.0);
        let slope = a * (-T::one() / T::lit(3.0) + a2 / T::lit(30.0) - a2 * a2 / T::lit(840.0)
            + a2 * a2 * a2 / T::lit(45360.0));
        (value, slope)
    } else {
        let (s, c) = a.sin_cos();
        (s / a, (a * c - s) / (a * a))
    }
}

/// Noise-free motion over `dt`. Planar displacement is written as
/// `v dt sinc(omega dt / 2)` along the mid-interval heading, which is exact
/// for every turn rate and reduces to straight-line motion at `omega = 0`.
pub fn transition<T: Scalar>(state: &ObjectState<T>, dt: T) -> ObjectState<T> {
    let mut v = state.as_vector().clone();
    let (speed, yaw, rate) = (state.speed(), state.yaw(), state.turn_rate());
    let half = rate * dt * T::lit(0.5);
    let (sc, _) = sinc(half);
    let (s, c) = (yaw + half).sin_cos();
    v[idx::X] += speed * dt * c * sc;
    v[idx::Y] += speed * dt * s * sc;
    v[idx::YAW] = wrap_angle(yaw + rate * dt);
    v[idx::Z] += state.vertical_speed() * dt;
    ObjectState::from_vector(v).expect("transition preserves layout")
}

/// Jacobian of [`transition`] with respect to the state.
pub fn transition_jacobian<T: Scalar>(state: &ObjectState<T>, dt: T) -> DMatrix<T> {
    let mut f = DMatrix::identity(state.dim(), state.dim());
    let (speed, yaw, rate) = (state.speed(), state.yaw(), state.turn_rate());
    let half_dt = dt * T::lit(0.5);
    let (sc, dsc) = sinc(rate * half_dt);
    let (s, c) = (yaw + rate * half_dt).sin_cos();
    let vdt = speed * dt;
    f[(idx::X, idx::SPEED)] = dt * c * sc;
    f[(idx::X, idx::YAW)] = -vdt * s * sc;
    f[(idx::X, idx::TURN_RATE)] = vdt * half_dt * (c * dsc - s * sc);
    f[(idx::Y, idx::SPEED)] = dt * s * sc;
    f[(idx::Y, idx::YAW)] = vdt * c * sc;
    f[(idx::Y, idx::TURN_RATE)] = vdt * half_dt * (s * dsc + c * sc);
    f[(idx::YAW, idx::TURN_RATE)] = dt;
    f[(idx::Z, idx::VZ)] = dt;
    f
}

/// Additive process noise over `dt`: longitudinal and yaw accelerations
/// drive the planar motion, vertical acceleration drives `(z, v_z)`, and the
/// extent follows independent random walks.
pub fn process_noise<T: Scalar>(state: &ObjectState<T>, dt: T, cfg: &ProcessNoiseConfig<T>) -> DMatrix<T> {
    let n = state.dim();
    let mut q = DMatrix::zeros(n, n);
    let half_dt2 = dt * dt * T::lit(0.5);
    let (s, c) = state.yaw().sin_cos();

    let mut g = DMatrix::zeros(n, 3);
    g[(idx::X, 0)] = half_dt2 * c;
    g[(idx::Y, 0)] = half_dt2 * s;
    g[(idx::SPEED, 0)] = dt;
    g[(idx::YAW, 1)] = half_dt2;
    g[(idx::TURN_RATE, 1)] = dt;
    g[(idx::Z, 2)] = half_dt2;
    g[(idx::VZ, 2)] = dt;
    let intensities = DMatrix::from_diagonal(&DVector::from_vec(vec![
        cfg.accel_std * cfg.accel_std,
        cfg.yaw_accel_std * cfg.yaw_accel_std,
        cfg.vertical_accel_std * cfg.vertical_accel_std,
    ]));
    q += &g * intensities * g.transpose();

    for i in idx::WIDTH..n {
        q[(i, i)] += cfg.shape_random_walk * dt;
    }
    q
}

pub fn predict<T: Scalar>(
    est: &GaussianEstimate<T>,
    dt: T,
    noise: &ProcessNoiseConfig<T>,
) -> Result<GaussianEstimate<T>, EkfError> {
    if dt <= T::zero() || !dt.is_finite() {
        return Err(EkfError::NonPositiveDt(dt.as_f64()));
    }
    let f = transition_jacobian(&est.mean, dt);
    let covariance = symmetrized(&(&f * &est.covariance * f.transpose() + process_noise(&est.mean, dt, noise)));
    Ok(GaussianEstimate {
        mean: transition(&est.mean, dt),
        covariance,
        timestamp: est.timestamp + dt,
    })
}

/// Result of a correction step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome<T: Scalar = f64> {
    pub estimate: GaussianEstimate<T>,
    /// Measurements that passed the gate and were applied.
    pub applied: usize,
    pub gated: usize,
}

pub fn update<T: Scalar>(
    est: &GaussianEstimate<T>,
    measurements: &[PointMeasurement<T>],
    model: &ShapeModel<T>,
    cfg: &UpdateConfig<T>,
) -> Result<GaussianEstimate<T>, EkfError> {
    update_with_stats(est, measurements, model, cfg).map(|o| o.estimate)
}

/// Sequential EKF correction with implicit zero pseudo-measurements.
///
/// The first sweep attributes each measurement to a surface sheet under the
/// running mean and holds its surface parameter fixed for the linearization.
/// Later passes restart from the prior and linearize every measurement at the
/// mean of the previous pass (an iterated EKF), so attributions made far from
/// the solution are revisited and the result no longer depends on the order
/// of the batch. The cap region test uses the profile polygon of the
/// linearization mean of each pass.
pub fn update_with_stats<T: Scalar>(
    est: &GaussianEstimate<T>,
    measurements: &[PointMeasurement<T>],
    model: &ShapeModel<T>,
    cfg: &UpdateConfig<T>,
) -> Result<UpdateOutcome<T>, EkfError> {
    if measurements.is_empty() {
        return Err(EkfError::EmptyBatch);
    }
    let mut outcome = sweep(est, measurements, model, cfg, None)?;
    for _ in 0..cfg.iterations {
        let next = sweep(est, measurements, model, cfg, Some(&outcome.estimate.mean))?;
        let mut step = next.estimate.mean.as_vector() - outcome.estimate.mean.as_vector();
        step[idx::YAW] = wrap_angle(step[idx::YAW]);
        outcome = next;
        if step.amax() < cfg.tolerance {
            break;
        }
    }
    Ok(outcome)
}

/// One pass over the batch starting from the prior. Without a fixed
/// linearization point every measurement is linearized at the running mean.
fn sweep<T: Scalar>(
    est: &GaussianEstimate<T>,
    measurements: &[PointMeasurement<T>],
    model: &ShapeModel<T>,
    cfg: &UpdateConfig<T>,
    fixed: Option<&ObjectState<T>>,
) -> Result<UpdateOutcome<T>, EkfError> {
    let mut context = model.context(fixed.unwrap_or(&est.mean))?;
    let mut x = est.mean.as_vector().clone();
    let mut p = est.covariance.clone();
    let mut mean = est.mean.clone();
    let gate2 = cfg.gate_sigma * cfg.gate_sigma;
    let (mut applied, mut gated) = (0, 0);
    let (lo, hi) = context.profile.domain();
    let model_var = Matrix3::identity() * (cfg.model_noise_std * cfg.model_noise_std);

    for m in measurements {
        let lin = fixed.unwrap_or(&mean);
        context.profile = model.profile(lin)?;
        let body = lin.to_body(&m.position);
        let assignment = context.assign(lin.width() * T::lit(0.5), &body);
        if let SurfaceAssignment::Extrusion { tau } = assignment {
            if cfg.skip_profile_ends && (tau <= lo || tau >= hi) {
                gated += 1;
                continue;
            }
        }
        let (hx, hv) = model.pseudo_measurement_jacobians(lin, m, &assignment)?;
        let mut innovation = -model.pseudo_measurement(lin, m, &assignment)?;
        if fixed.is_some() {
            let mut dx = &x - lin.as_vector();
            dx[idx::YAW] = wrap_angle(dx[idx::YAW]);
            innovation -= &hx * dx;
        }

        let pht = &p * hx.transpose();
        let s = &hx * &pht + &hv * (m.noise + model_var) * hv.transpose();
        let Some(s_chol) = s.clone().cholesky() else {
            gated += 1;
            continue;
        };
        let s_inv = s_chol.inverse();
        let d2 = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
        if !(d2 <= gate2) {
            gated += 1;
            continue;
        }
        let k = &pht * &s_inv;
        x += &k * innovation;
        p -= &k * &s * k.transpose();
        p = symmetrized(&p);
        x[idx::YAW] = wrap_angle(x[idx::YAW]);
        x[idx::WIDTH] = x[idx::WIDTH].max(cfg.min_width);
        mean = ObjectState::from_vector(x.clone())?;
        applied += 1;
    }

    Ok(UpdateOutcome {
        estimate: GaussianEstimate {
            mean,
            covariance: p,
            timestamp: est.timestamp,
        },
        applied,
        gated,
    })
}

/// Starts a track from a single point cloud.
///
/// The position is the centroid, the yaw the principal axis of the ground-plane
/// scatter (the direction closest to `heading_hint` when one is given), the
/// speed zero, and the extent the template profile stretched over the body-frame
/// bounding box of the points.
const BOX_FIT_STEPS: usize = 180;
/// Floor on a point's edge distance in the box-fit score (m).
const BOX_FIT_MIN_DISTANCE: f64 = 0.01;

/// Heading of the planar bounding rectangle whose edges hug the points most
/// closely, pointing along its longer side. Unlike the principal axis this is
/// not pulled off by an L-shaped partial view.
fn box_fit_heading<T: Scalar>(measurements: &[PointMeasurement<T>]) -> T {
    let big = T::max_value().expect("bounded float");
    let floor = T::lit(BOX_FIT_MIN_DISTANCE);
    let mut best = (-T::one(), T::zero());
    for k in 0..BOX_FIT_STEPS {
        let a = T::frac_pi_2() * T::from_usize_lossy(k) / T::from_usize_lossy(BOX_FIT_STEPS);
        let (s, c) = a.sin_cos();
        let rotated: Vec<_> = measurements
            .iter()
            .map(|m| Vector2::new(m.position.x * c + m.position.y * s, m.position.y * c - m.position.x * s))
            .collect();
        let (lo, hi) = rotated.iter().fold((Vector2::repeat(big), Vector2::repeat(-big)), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        let score = rotated.iter().fold(T::zero(), |acc, p| {
            let d = (p.x - lo.x).min(hi.x - p.x).min(p.y - lo.y).min(hi.y - p.y);
            acc + T::one() / d.max(floor)
        });
        if score > best.0 {
            let ext = hi - lo;
            best = (score, if ext.x >= ext.y { a } else { a + T::frac_pi_2() });
        }
    }
    best.1
}

pub fn initialize<T: Scalar>(
    measurements: &[PointMeasurement<T>],
    model: &ShapeModel<T>,
    cfg: &InitConfig<T>,
    heading_hint: Option<T>,
    timestamp: T,
) -> Result<GaussianEstimate<T>, InitError> {
    if measurements.len() < cfg.min_points.max(1) {
        return Err(InitError::TooFewPoints {
            need: cfg.min_points.max(1),
            got: measurements.len(),
        });
    }
    let count = T::from_usize_lossy(measurements.len());
    let centroid = measurements
        .iter()
        .fold(Vector3::zeros(), |acc, m| acc + m.position)
        / count;

    let mut yaw = box_fit_heading(measurements);
    if let Some(hint) = heading_hint {
        if wrap_angle(yaw - hint).abs() > T::frac_pi_2() {
            yaw += T::pi();
        }
    } else if yaw < T::zero() && wrap_angle(yaw + T::pi()).abs() <= yaw.abs() {
        // Canonical representative of the axis for repeatable results.
        yaw += T::pi();
    }
    let yaw = wrap_angle(yaw);

    let probe = ObjectState::new(
        [centroid.x, centroid.y, T::zero(), yaw, T::zero(), centroid.z, T::zero()],
        T::one(),
        &vec![Vector2::zeros(); model.control_count()],
    )?;
    let big = T::max_value().expect("bounded float");
    let (lo, hi) = measurements.iter().fold(
        (Vector3::repeat(big), Vector3::repeat(-big)),
        |(lo, hi), m| {
            let b = probe.to_body(&m.position);
            (lo.inf(&b), hi.sup(&b))
        },
    );
    // The extreme points of a noisy cloud overshoot the surface by about two
    // standard deviations on each side.
    let mean_var = measurements.iter().fold(T::zero(), |acc, m| acc + m.noise.trace()) / (count * T::lit(3.0));
    let overshoot = T::lit(4.0) * mean_var.max(T::zero()).sqrt();
    let half = T::lit(0.5);
    let extent = |lo: T, hi: T, min: T| {
        let mid = (lo + hi) * half;
        let len = (hi - lo - overshoot).max(min);
        (mid, len * half)
    };
    let (cx, hx) = extent(lo.x, hi.x, cfg.min_length);
    let (cz, hz) = extent(lo.z, hi.z, cfg.min_height);
    let width = (hi.y - lo.y - overshoot).max(cfg.min_width);

    let template = resample_template(&cfg.template, model.control_count());
    let controls: Vec<_> = template
        .iter()
        .map(|t| Vector2::new(cx + t.x * hx, cz + t.y * hz))
        .collect();
    let mean = ObjectState::new(
        [centroid.x, centroid.y, T::zero(), yaw, T::zero(), centroid.z, T::zero()],
        width,
        &controls,
    )?;

    let n = mean.dim();
    let mut diag = DVector::from_element(n, cfg.shape_var);
    diag[idx::X] = cfg.position_var;
    diag[idx::Y] = cfg.position_var;
    diag[idx::SPEED] = cfg.speed_var;
    diag[idx::YAW] = cfg.yaw_var;
    diag[idx::TURN_RATE] = cfg.turn_rate_var;
    diag[idx::Z] = cfg.vertical_var;
    diag[idx::VZ] = cfg.vertical_speed_var;
    diag[idx::WIDTH] = cfg.width_var;
    Ok(GaussianEstimate {
        mean,
        covariance: DMatrix::from_diagonal(&diag),
        timestamp,
    })
}

/// Template with `count` points, linearly re-parameterized by index when the
/// configured template has a different length.
fn resample_template<T: Scalar>(template: &[[T; 2]], count: usize) -> Vec<Vector2<T>> {
    let pts: Vec<Vector2<T>> = template.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    if pts.len() == count || pts.len() < 2 {
        return if pts.len() == count {
            pts
        } else {
            vec![Vector2::zeros(); count]
        };
    }
    (0..count)
        .map(|i| {
            let u = T::from_usize_lossy(i) * T::from_usize_lossy(pts.len() - 1) / T::from_usize_lossy(count - 1);
            let j = u.floor().as_f64() as usize;
            let j = j.min(pts.len() - 2);
            let f = u - T::from_usize_lossy(j);
            pts[j] * (T::one() - f) + pts[j + 1] * f
        })
        .collect()
}

/// Lifecycle of a [`Tracker`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Waiting for enough points to start.
    Pending,
    /// Started on this frame.
    Initialized,
    /// Predicted and corrected.
    Updated,
    /// Predicted only; no usable measurements this frame.
    Coasted,
}

/// Single-object tracker: one filter plus its configuration.
///
/// Track start needs two frames with enough points; the centroid motion
/// between them disambiguates the heading along the principal axis.
#[derive(Debug, Clone)]
pub struct Tracker<T: Scalar = f64> {
    pub model: ShapeModel<T>,
    pub process: ProcessNoiseConfig<T>,
    pub update_cfg: UpdateConfig<T>,
    pub init_cfg: InitConfig<T>,
    /// Centroid displacement needed before the motion direction is trusted (m).
    pub min_heading_displacement: T,
    estimate: Option<GaussianEstimate<T>>,
    first_sighting: Option<(T, Vector3<T>)>,
    support: usize,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(
        model: ShapeModel<T>,
        process: ProcessNoiseConfig<T>,
        update_cfg: UpdateConfig<T>,
        init_cfg: InitConfig<T>,
    ) -> Self {
        Self {
            model,
            process,
            update_cfg,
            init_cfg,
            min_heading_displacement: T::lit(0.2),
            estimate: None,
            first_sighting: None,
            support: 0,
        }
    }

    pub fn estimate(&self) -> Option<&GaussianEstimate<T>> {
        self.estimate.as_ref()
    }

    /// Replaces the current estimate (e.g. with a fused one).
    pub fn set_estimate(&mut self, est: GaussianEstimate<T>) {
        self.estimate = Some(est);
    }

    /// Measurements applied in the most recent step.
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn step(&mut self, timestamp: T, measurements: &[PointMeasurement<T>]) -> Result<TrackStatus, EkfError> {
        self.step_batches(timestamp, &[measurements])
    }

    /// Predicts once to `timestamp`, then corrects with each batch in turn.
    /// A track start uses the batches pooled together.
    pub fn step_batches(&mut self, timestamp: T, batches: &[&[PointMeasurement<T>]]) -> Result<TrackStatus, EkfError> {
        self.support = 0;
        let Some(prior) = self.estimate.take() else {
            let pooled: Vec<_> = batches.iter().flat_map(|b| b.iter().cloned()).collect();
            return self.try_start(timestamp, &pooled);
        };
        let dt = timestamp - prior.timestamp;
        let mut est = if dt > T::zero() {
            predict(&prior, dt, &self.process)?
        } else {
            prior
        };
        let mut applied = 0;
        for batch in batches.iter().filter(|b| !b.is_empty()) {
            let outcome = update_with_stats(&est, batch, &self.model, &self.update_cfg)?;
            applied += outcome.applied;
            est = outcome.estimate;
        }
        est.timestamp = timestamp;
        self.support = applied;
        self.estimate = Some(est);
        Ok(if applied > 0 {
            TrackStatus::Updated
        } else {
            TrackStatus::Coasted
        })
    }

    fn try_start(&mut self, timestamp: T, measurements: &[PointMeasurement<T>]) -> Result<TrackStatus, EkfError> {
        if measurements.len() < self.init_cfg.min_points {
            return Ok(TrackStatus::Pending);
        }
        let count = T::from_usize_lossy(measurements.len());
        let centroid = measurements.iter().fold(Vector3::zeros(), |a, m| a + m.position) / count;
        let Some((first_time, first)) = self.first_sighting else {
            self.first_sighting = Some((timestamp, centroid));
            return Ok(TrackStatus::Pending);
        };
        let shift = Vector2::new(centroid.x - first.x, centroid.y - first.y);
        let hint = (shift.norm() >= self.min_heading_displacement).then(|| shift.y.atan2(shift.x));
        match initialize(measurements, &self.model, &self.init_cfg, hint, timestamp) {
            Ok(mut est) => {
                // The centroid motion along the heading also gives the speed.
                let dt = timestamp - first_time;
                if hint.is_some() && dt > T::zero() {
                    let (s, c) = est.mean.yaw().sin_cos();
                    let mut v = est.mean.as_vector().clone();
                    v[idx::SPEED] = (shift.x * c + shift.y * s) / dt;
                    est.mean = ObjectState::from_vector(v)?;
                }
                self.support = measurements.len();
                self.estimate = Some(est);
                Ok(TrackStatus::Initialized)
            }
            Err(InitError::TooFewPoints { .. }) => Ok(TrackStatus::Pending),
            Err(InitError::Shape(e)) => Err(e.into()),
        }
    }
}
