//! Synthetic two-sensor scenes: a vehicle following a left turn, observed by
//! elevated lidar-like sensors that return noisy points of its visible surface.

use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_angle, Scalar};
use crate::shape3d::{ObjectState, PointMeasurement, ShapeError, ShapeModel};

/// Candidate surface samples drawn per budgeted point before culling.
const OVERSAMPLING: usize = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time {0} outside the scenario [0, {1}]")]
    TimeOutOfRange(f64, f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Side profile of a sedan, body frame, as spline control points `(x, z)`.
/// Length about 4.5 m and height about 1.5 m; the body origin sits 0.75 m
/// above the ground.
pub const SEDAN_PROFILE: [[f64; 2]; 10] = [
    [-2.25, -0.75],
    [-2.3, -0.05],
    [-2.05, 0.2],
    [-1.3, 0.3],
    [-0.9, 0.85],
    [0.4, 0.85],
    [1.0, 0.3],
    [2.2, 0.2],
    [2.35, -0.2],
    [2.25, -0.75],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig<T: Scalar = f64> {
    pub id: u32,
    /// Mounting position (m).
    pub position: [T; 3],
    /// Boresight azimuth (rad); the horizontal field of view is centred on it.
    pub yaw: T,
    /// Full horizontal field of view (rad).
    pub horizontal_fov: T,
    /// Elevation limits `[min, max]` (rad).
    pub vertical_fov: [T; 2],
    /// Scan rate (Hz).
    pub rate: T,
    /// Per-axis measurement noise standard deviation (m).
    pub noise_std: T,
    pub max_range: T,
    /// Maximum number of returned points per scan.
    pub points_budget: usize,
    /// Beyond this range the budget shrinks with the inverse square of the
    /// distance to the object. `None` keeps the full budget at any range.
    pub falloff_range: Option<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for SensorConfig<T> {
    fn default() -> Self {
        Self {
            id: 1,
            position: [T::zero(), T::zero(), T::lit(7.0)],
            yaw: T::zero(),
            horizontal_fov: T::two_pi(),
            vertical_fov: [T::lit(-1.5), T::lit(0.3)],
            rate: T::lit(10.0),
            noise_std: T::lit(0.05),
            max_range: T::lit(80.0),
            points_budget: 300,
            falloff_range: None,
            seed: 0,
        }
    }
}

impl<T: Scalar> SensorConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(format!("sensor {}: {m}", self.id)));
        if !(self.rate > T::zero()) {
            return bad("rate must be positive");
        }
        if !(self.noise_std >= T::zero()) {
            return bad("noise_std must be non-negative");
        }
        if !(self.max_range > T::zero()) {
            return bad("max_range must be positive");
        }
        if !(self.horizontal_fov > T::zero()) || !(self.vertical_fov[0] < self.vertical_fov[1]) {
            return bad("empty field of view");
        }
        if self.falloff_range.is_some_and(|r| !(r > T::zero())) {
            return bad("falloff_range must be positive");
        }
        Ok(())
    }

    pub fn position(&self) -> Vector3<T> {
        Vector3::from(self.position)
    }

    /// Range, horizontal and vertical field-of-view test.
    pub fn sees(&self, point: &Vector3<T>) -> bool {
        let d = point - self.position();
        let horizontal = d.x.hypot(d.y);
        if d.norm() > self.max_range {
            return false;
        }
        let elevation = d.z.atan2(horizontal);
        if elevation < self.vertical_fov[0] || elevation > self.vertical_fov[1] {
            return false;
        }
        if self.horizontal_fov >= T::two_pi() {
            return true;
        }
        let azimuth = wrap_angle(d.y.atan2(d.x) - self.yaw);
        azimuth.abs() <= self.horizontal_fov * T::lit(0.5)
    }

    /// Point budget for an object at `range`.
    pub fn budget_at(&self, range: T) -> usize {
        match self.falloff_range {
            Some(r0) if range > r0 => {
                let scale = (r0 / range).powi(2);
                (T::from_usize_lossy(self.points_budget) * scale).round().to_usize().unwrap_or(0)
            }
            _ => self.points_budget,
        }
    }
}

/// Straight run, a 90 degree left arc, straight run, at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig<T: Scalar = f64> {
    pub speed: T,
    pub turn_radius: T,
    /// Ground-plane start position (m).
    pub start: [T; 2],
    /// Initial heading (rad).
    pub heading: T,
}

impl<T: Scalar> Default for TrajectoryConfig<T> {
    fn default() -> Self {
        Self {
            speed: T::lit(6.0),
            turn_radius: T::lit(12.0),
            start: [T::zero(), T::zero()],
            heading: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig<T: Scalar = f64> {
    pub width: T,
    /// Height of the body origin above the ground (m).
    pub center_height: T,
    /// Control points `(x, z)` of the side profile.
    pub profile: Vec<[T; 2]>,
    pub degree: usize,
}

impl<T: Scalar> Default for VehicleConfig<T> {
    fn default() -> Self {
        Self {
            width: T::lit(2.0),
            center_height: T::lit(0.75),
            profile: SEDAN_PROFILE.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect(),
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig<T: Scalar = f64> {
    pub seed: u64,
    pub duration: T,
    pub frame_rate: T,
    pub trajectory: TrajectoryConfig<T>,
    pub vehicle: VehicleConfig<T>,
    pub sensors: Vec<SensorConfig<T>>,
}

impl<T: Scalar> Default for ScenarioConfig<T> {
    fn default() -> Self {
        let trajectory = TrajectoryConfig::default();
        let duration = T::lit(10.0);
        let path = LeftTurn::new(trajectory.speed, trajectory.turn_radius, duration);
        let (end, _) = path.pose_at_length(path.length());
        let end = Vector2::new(end.x + trajectory.start[0], end.y + trajectory.start[1]);
        let sensor = |id: u32, x: T, y: T, yaw: T, noise: f64, falloff: Option<f64>| SensorConfig {
            id,
            position: [x, y, T::lit(7.0)],
            yaw,
            noise_std: T::lit(noise),
            falloff_range: falloff.map(T::lit),
            seed: u64::from(id) * 1000 + 17,
            ..SensorConfig::default()
        };
        Self {
            seed: 42,
            duration,
            frame_rate: T::lit(10.0),
            vehicle: VehicleConfig::default(),
            // One sensor at each end of the segment; the second is noisier.
            sensors: vec![
                sensor(1, trajectory.start[0] - T::lit(6.0), trajectory.start[1] - T::lit(8.0), T::lit(0.8), 0.04, None),
                sensor(2, end.x + T::lit(8.0), end.y + T::lit(6.0), T::lit(-2.4), 0.08, None),
            ],
            trajectory,
        }
    }
}

impl<T: Scalar + DeserializeOwned> ScenarioConfig<T> {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

impl<T: Scalar + Serialize> ScenarioConfig<T> {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

impl<T: Scalar> ScenarioConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.duration > T::zero()) || !(self.frame_rate > T::zero()) {
            return bad("duration and frame_rate must be positive");
        }
        if !(self.trajectory.speed >= T::zero()) || !(self.trajectory.turn_radius > T::zero()) {
            return bad("speed must be non-negative and turn_radius positive");
        }
        if !(self.vehicle.width > T::zero()) {
            return bad("vehicle width must be positive");
        }
        if self.vehicle.profile.len() < self.vehicle.degree + 1 {
            return bad("vehicle profile has too few control points");
        }
        if self.sensors.is_empty() {
            return bad("at least one sensor is required");
        }
        let mut ids: Vec<_> = self.sensors.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.sensors.len() {
            return bad("sensor ids must be unique");
        }
        self.sensors.iter().try_for_each(SensorConfig::validate)
    }
}

/// Left-turn path geometry starting at the origin heading along +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeftTurn<T: Scalar = f64> {
    pub speed: T,
    pub radius: T,
    lead_in: T,
    arc: T,
    lead_out: T,
}

impl<T: Scalar> LeftTurn<T> {
    /// The arc is a quarter circle, shortened to half the path when the path
    /// is too short; the straight parts split the remainder evenly.
    pub fn new(speed: T, radius: T, duration: T) -> Self {
        let length = speed * duration;
        let arc = (radius * T::frac_pi_2()).min(length * T::lit(0.5));
        let straight = (length - arc) * T::lit(0.5);
        Self {
            speed,
            radius,
            lead_in: straight,
            arc,
            lead_out: straight,
        }
    }

    pub fn length(&self) -> T {
        self.lead_in + self.arc + self.lead_out
    }

    /// Ground position and heading after travelling `s` metres.
    pub fn pose_at_length(&self, s: T) -> (Vector2<T>, T) {
        let s = s.max(T::zero()).min(self.length());
        if s < self.lead_in {
            return (Vector2::new(s, T::zero()), T::zero());
        }
        let a = s - self.lead_in;
        if a < self.arc {
            let phi = a / self.radius;
            return (Vector2::new(self.lead_in + self.radius * phi.sin(), self.radius * (T::one() - phi.cos())), phi);
        }
        let phi = self.arc / self.radius;
        let corner = Vector2::new(self.lead_in + self.radius * phi.sin(), self.radius * (T::one() - phi.cos()));
        let rest = s - self.lead_in - self.arc;
        (corner + Vector2::new(phi.cos(), phi.sin()) * rest, phi)
    }

    pub fn turn_rate_at_length(&self, s: T) -> T {
        let a = s - self.lead_in;
        if a >= T::zero() && a < self.arc && self.arc > T::zero() {
            self.speed / self.radius
        } else {
            T::zero()
        }
    }

    pub fn sample(&self, t: T) -> TrajectoryPoint<T> {
        let s = self.speed * t;
        let (p, yaw) = self.pose_at_length(s);
        TrajectoryPoint {
            t,
            position: Vector3::new(p.x, p.y, T::zero()),
            yaw,
            speed: self.speed,
            turn_rate: self.turn_rate_at_length(s),
        }
    }
}

/// Ground-truth kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint<T: Scalar = f64> {
    pub t: T,
    pub position: Vector3<T>,
    pub yaw: T,
    pub speed: T,
    pub turn_rate: T,
}

/// Samples the left-turn path at `0, dt, 2dt, ...` up to `duration`, starting
/// at the origin heading along +x with `z = 0`.
pub fn make_left_turn_trajectory<T: Scalar>(speed: T, turn_radius: T, duration: T, dt: T) -> Vec<TrajectoryPoint<T>> {
    let path = LeftTurn::new(speed, turn_radius, duration);
    let steps = (duration / dt + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    (0..=steps).map(|k| path.sample(dt * T::from_usize_lossy(k))).collect()
}

/// Points returned by one sensor in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorScan<T: Scalar = f64> {
    pub sensor_id: u32,
    pub points: Vec<PointMeasurement<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T: Scalar = f64> {
    pub index: usize,
    pub timestamp: T,
    /// One entry per sensor in configuration order; a sensor that does not
    /// fire this frame has an empty scan.
    pub scans: Vec<SensorScan<T>>,
    pub ground_truth: ObjectState<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn scan(&self, sensor_id: u32) -> Option<&SensorScan<T>> {
        self.scans.iter().find(|s| s.sensor_id == sensor_id)
    }
}

/// A rendered point with the surface point it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPoint<T: Scalar = f64> {
    pub source: Vector3<T>,
    pub measured: Vector3<T>,
}

#[derive(Debug, Clone)]
pub struct Scenario<T: Scalar = f64> {
    pub config: ScenarioConfig<T>,
    pub model: ShapeModel<T>,
    path: LeftTurn<T>,
    control_points: Vec<Vector2<T>>,
    /// Extrusion share of the surface area.
    extrusion_share: T,
}

impl<T: Scalar> Scenario<T> {
    pub fn new(config: ScenarioConfig<T>) -> Result<Self, SimError> {
        config.validate()?;
        let control_points: Vec<_> = config.vehicle.profile.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        let model = ShapeModel::new(control_points.len(), config.vehicle.degree)?;
        let path = LeftTurn::new(config.trajectory.speed, config.trajectory.turn_radius, config.duration);
        let mut s = Self {
            config,
            model,
            path,
            control_points,
            extrusion_share: T::one(),
        };
        let probe = s.truth_at(T::zero())?;
        let polygon = s.model.side_view_polygon(&probe, s.model.samples_per_span())?;
        let v = polygon.vertices();
        // The closing chord is the open underside and carries no surface.
        let arc: T = v.windows(2).fold(T::zero(), |acc, w| acc + (w[1] - w[0]).norm());
        let side = arc * probe.width();
        s.extrusion_share = side / (side + polygon.area() * T::lit(2.0));
        Ok(s)
    }

    pub fn path(&self) -> &LeftTurn<T> {
        &self.path
    }

    pub fn duration(&self) -> T {
        self.config.duration
    }

    pub fn frame_rate(&self) -> T {
        self.config.frame_rate
    }

    pub fn frame_count(&self) -> usize {
        (self.config.duration * self.config.frame_rate + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1
    }

    pub fn frame_time(&self, index: usize) -> T {
        T::from_usize_lossy(index) / self.config.frame_rate
    }

    /// Ground truth placed at the configured start and heading.
    pub fn truth_at(&self, t: T) -> Result<ObjectState<T>, SimError> {
        if !(t >= T::zero() && t <= self.config.duration + T::lit(1e-9)) {
            return Err(SimError::TimeOutOfRange(t.as_f64(), self.config.duration.as_f64()));
        }
        let tr = &self.config.trajectory;
        let k = self.path.sample(t);
        let (s, c) = tr.heading.sin_cos();
        let x = tr.start[0] + c * k.position.x - s * k.position.y;
        let y = tr.start[1] + s * k.position.x + c * k.position.y;
        let motion = [x, y, k.speed, tr.heading + k.yaw, k.turn_rate, self.config.vehicle.center_height, T::zero()];
        Ok(ObjectState::new(motion, self.config.vehicle.width, &self.control_points)?)
    }

    /// Ground truth at every frame time.
    pub fn trajectory(&self) -> Result<Vec<(T, ObjectState<T>)>, SimError> {
        (0..self.frame_count())
            .map(|k| {
                let t = self.frame_time(k);
                Ok((t, self.truth_at(t)?))
            })
            .collect()
    }

    fn sensor_fires(&self, sensor: &SensorConfig<T>, index: usize) -> bool {
        if index == 0 || sensor.rate >= self.config.frame_rate {
            return true;
        }
        let ticks = |k: usize| (T::from_usize_lossy(k) * sensor.rate / self.config.frame_rate).floor();
        ticks(index) > ticks(index - 1)
    }

    fn rng_for(&self, sensor: &SensorConfig<T>, t: T) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.config.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&sensor.seed.to_le_bytes());
        seed[16..24].copy_from_slice(&t.as_f64().to_bits().to_le_bytes());
        seed[24..28].copy_from_slice(&sensor.id.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Visible, budgeted and noisy points of one sensor at time `t`.
    pub fn render_sensor(&self, sensor: &SensorConfig<T>, t: T) -> Result<Vec<RenderedPoint<T>>, SimError> {
        let truth = self.truth_at(t)?;
        let mut rng = self.rng_for(sensor, t);
        let budget = sensor.budget_at((truth.position() - sensor.position()).norm());
        if budget == 0 {
            return Ok(Vec::new());
        }
        // Candidates depend on the configured budget only, so a range-thinned
        // scan is a prefix of the full one.
        let candidates = OVERSAMPLING * sensor.points_budget;
        let n_ext = (T::from_usize_lossy(candidates) * self.extrusion_share).round().to_usize().unwrap_or(0);
        let samples = self
            .model
            .sample_surface_detailed(&truth, n_ext, candidates - n_ext, rand::Rng::random(&mut rng))?;
        let origin = sensor.position();
        let mut visible: Vec<_> = samples
            .into_iter()
            .filter(|s| s.normal_global.dot(&(origin - s.global)) > T::zero() && sensor.sees(&s.global))
            .map(|s| s.global)
            .collect();
        // Uniform subsample without replacement.
        visible.shuffle(&mut rng);
        visible.truncate(budget);
        let std = sensor.noise_std.as_f64();
        let normal = Normal::new(0.0, std).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(visible
            .into_iter()
            .map(|source| {
                let offset = Vector3::from_fn(|_, _| T::lit(normal.sample(&mut rng)));
                RenderedPoint {
                    measured: source + offset,
                    source,
                }
            })
            .collect())
    }

    pub fn render_frame(&self, t: T) -> Result<Frame<T>, SimError> {
        let index = (t * self.config.frame_rate).round().to_usize().unwrap_or(0);
        self.render(index, t)
    }

    /// The frame at grid index `index`.
    pub fn frame(&self, index: usize) -> Result<Frame<T>, SimError> {
        self.render(index, self.frame_time(index))
    }

    fn render(&self, index: usize, t: T) -> Result<Frame<T>, SimError> {
        let ground_truth = self.truth_at(t)?;
        let scans = self
            .config
            .sensors
            .iter()
            .map(|sensor| {
                let points = if self.sensor_fires(sensor, index) {
                    let std = Vector3::repeat(sensor.noise_std);
                    self.render_sensor(sensor, t)?
                        .into_iter()
                        .map(|p| PointMeasurement::with_std(p.measured, std))
                        .collect()
                } else {
                    Vec::new()
                };
                Ok(SensorScan {
                    sensor_id: sensor.id,
                    points,
                })
            })
            .collect::<Result<_, SimError>>()?;
        Ok(Frame {
            index,
            timestamp: t,
            scans,
            ground_truth,
        })
    }
}

/// Writes the points of a frame as `x,y,z,sensor_id` rows.
pub fn write_frame_csv<T: Scalar, W: Write>(frame: &Frame<T>, writer: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "z", "sensor_id"])?;
    for scan in &frame.scans {
        for p in &scan.points {
            let q = p.position;
            w.write_record([
                q.x.to_string(),
                q.y.to_string(),
                q.z.to_string(),
                scan.sensor_id.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
