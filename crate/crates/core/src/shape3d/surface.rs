use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{idx, ObjectState, PointMeasurement, Polygon, ShapeError};
use crate::scalar::Scalar;
use crate::splinecore::{BSplineCurve, KnotVector};

/// A point is a cap candidate only if its (x, z) lies this far inside the profile.
pub const CAP_MARGIN: f64 = 1e-6;

pub const DEFAULT_SAMPLES_PER_SPAN: usize = 16;

/// Which sheet of the surface a measurement is attributed to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceAssignment<T: Scalar = f64> {
    Extrusion { tau: T },
    CapPositiveY,
    CapNegativeY,
}

impl<T: Scalar> SurfaceAssignment<T> {
    /// Rows of the pseudo-measurement this assignment produces.
    pub fn residual_dim(&self) -> usize {
        match self {
            Self::Extrusion { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_cap(&self) -> bool {
        !matches!(self, Self::Extrusion { .. })
    }
}

/// A noise-free surface point with its outward normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample<T: Scalar = f64> {
    pub body: Vector3<T>,
    pub global: Vector3<T>,
    pub normal_body: Vector3<T>,
    pub normal_global: Vector3<T>,
    pub assignment: SurfaceAssignment<T>,
}

/// Profile curve and polygon of one state, reused across many assignments.
#[derive(Debug, Clone)]
pub struct SurfaceContext<T: Scalar = f64> {
    pub profile: BSplineCurve<T>,
    pub polygon: Polygon<T>,
}

impl<T: Scalar> SurfaceContext<T> {
    /// Nearest-sheet assignment of a body-frame point; see [`ShapeModel::assign_surface`].
    pub fn assign(&self, half_width: T, body_point: &Vector3<T>) -> SurfaceAssignment<T> {
        let xz = Vector2::new(body_point.x, body_point.z);
        let tau = self.profile.closest_tau(&xz);
        let curve_residual = (self.profile.evaluate(tau).expect("tau in domain") - xz).norm();
        let inside = self.polygon.signed_distance(&xz) < -T::lit(CAP_MARGIN);
        let cap_residual = (body_point.y.abs() - half_width).abs();
        if inside && cap_residual < curve_residual {
            if body_point.y >= T::zero() {
                SurfaceAssignment::CapPositiveY
            } else {
                SurfaceAssignment::CapNegativeY
            }
        } else {
            SurfaceAssignment::Extrusion { tau }
        }
    }
}

/// Spline layout shared by all states of a tracker: degree and knots of the
/// side-view profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel<T: Scalar = f64> {
    degree: usize,
    knots: KnotVector<T>,
    control_count: usize,
    samples_per_span: usize,
}

impl<T: Scalar> ShapeModel<T> {
    /// Clamped uniform knots on `[0, 1]`.
    pub fn new(control_count: usize, degree: usize) -> Result<Self, ShapeError> {
        let knots = KnotVector::clamped_uniform(control_count, degree)?;
        Self::with_knots(degree, knots)
    }

    pub fn with_knots(degree: usize, knots: KnotVector<T>) -> Result<Self, ShapeError> {
        let control_count = knots.basis_count(degree);
        // Validate through a throwaway curve.
        BSplineCurve::new(degree, knots.clone(), vec![Vector2::zeros(); control_count])?;
        Ok(Self {
            degree,
            knots,
            control_count,
            samples_per_span: DEFAULT_SAMPLES_PER_SPAN,
        })
    }

    pub fn with_samples_per_span(mut self, samples: usize) -> Result<Self, ShapeError> {
        if samples < 2 {
            return Err(ShapeError::TooFewSamples(samples));
        }
        self.samples_per_span = samples;
        Ok(self)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &KnotVector<T> {
        &self.knots
    }

    pub fn control_count(&self) -> usize {
        self.control_count
    }

    pub fn samples_per_span(&self) -> usize {
        self.samples_per_span
    }

    /// State dimension `8 + 2n`.
    pub fn state_dim(&self) -> usize {
        idx::CONTROL + 2 * self.control_count
    }

    fn check(&self, state: &ObjectState<T>) -> Result<(), ShapeError> {
        if state.control_count() != self.control_count {
            return Err(ShapeError::ControlCountMismatch {
                expected: self.control_count,
                got: state.control_count(),
            });
        }
        Ok(())
    }

    pub fn profile(&self, state: &ObjectState<T>) -> Result<BSplineCurve<T>, ShapeError> {
        self.check(state)?;
        Ok(BSplineCurve::new(self.degree, self.knots.clone(), state.control_points())?)
    }

    fn polygon_from(&self, profile: &BSplineCurve<T>, samples_per_span: usize) -> Polygon<T> {
        let k = self.knots.as_slice();
        let n = self.control_count;
        let step = T::one() / T::from_usize_lossy(samples_per_span);
        let mut vertices: Vec<Vector2<T>> = Vec::new();
        let push = |p: Vector2<T>, vertices: &mut Vec<Vector2<T>>| {
            if vertices.last().is_none_or(|q| (p - q).norm() > T::lit(1e-12)) {
                vertices.push(p);
            }
        };
        for span in self.degree..n {
            let (a, b) = (k[span], k[span + 1]);
            if b <= a {
                continue;
            }
            for s in 0..samples_per_span {
                let t = a + (b - a) * step * T::from_usize_lossy(s);
                push(profile.evaluate(t).expect("sample in domain"), &mut vertices);
            }
        }
        push(profile.evaluate(k[n]).expect("domain end"), &mut vertices);
        if vertices.len() > 1 && (vertices[0] - vertices[vertices.len() - 1]).norm() <= T::lit(1e-12) {
            vertices.pop();
        }
        Polygon::new(vertices)
    }

    /// Densely sampled profile closed by the chord between its endpoints, in
    /// body x-z coordinates. Fails for degenerate or self-intersecting outlines.
    pub fn side_view_polygon(&self, state: &ObjectState<T>, samples_per_span: usize) -> Result<Polygon<T>, ShapeError> {
        if samples_per_span < 2 {
            return Err(ShapeError::TooFewSamples(samples_per_span));
        }
        let polygon = self.polygon_from(&self.profile(state)?, samples_per_span);
        if !polygon.is_simple() {
            return Err(ShapeError::DegenerateProfile);
        }
        Ok(polygon)
    }

    /// Profile and (unchecked) polygon for repeated assignments.
    pub fn context(&self, state: &ObjectState<T>) -> Result<SurfaceContext<T>, ShapeError> {
        let profile = self.profile(state)?;
        let polygon = self.polygon_from(&profile, self.samples_per_span);
        Ok(SurfaceContext { profile, polygon })
    }

    /// Attributes a body-frame point to the extrusion or one of the caps.
    ///
    /// A cap wins only when the point's (x, z) lies inside the profile region
    /// by more than [`CAP_MARGIN`] and its distance to the cap plane is
    /// strictly smaller than its distance to the profile curve; the cap side
    /// follows the sign of the body y coordinate.
    pub fn assign_surface(
        &self,
        state: &ObjectState<T>,
        profile: &BSplineCurve<T>,
        body_point: &Vector3<T>,
    ) -> SurfaceAssignment<T> {
        let context = SurfaceContext {
            polygon: self.polygon_from(profile, self.samples_per_span),
            profile: profile.clone(),
        };
        context.assign(state.width() * T::lit(0.5), body_point)
    }

    /// Pseudo-measurement `h(x, y, 0)`: two rows `(h_ex, h_ez)` for the
    /// extrusion, one row `h_cy` for a cap.
    pub fn pseudo_measurement(
        &self,
        state: &ObjectState<T>,
        measurement: &PointMeasurement<T>,
        assignment: &SurfaceAssignment<T>,
    ) -> Result<DVector<T>, ShapeError> {
        self.pseudo_measurement_with_noise(state, &measurement.position, &Vector3::zeros(), assignment)
    }

    /// `h(x, y, v)` with an explicit global-frame noise sample `v`.
    pub fn pseudo_measurement_with_noise(
        &self,
        state: &ObjectState<T>,
        position: &Vector3<T>,
        noise: &Vector3<T>,
        assignment: &SurfaceAssignment<T>,
    ) -> Result<DVector<T>, ShapeError> {
        self.check(state)?;
        let body = state.to_body(&(position - noise));
        Ok(match *assignment {
            SurfaceAssignment::Extrusion { tau } => {
                let s = self.profile(state)?.evaluate(tau)?;
                DVector::from_vec(vec![body.x - s.x, body.z - s.y])
            }
            SurfaceAssignment::CapPositiveY => DVector::from_vec(vec![body.y - state.width() * T::lit(0.5)]),
            SurfaceAssignment::CapNegativeY => DVector::from_vec(vec![body.y + state.width() * T::lit(0.5)]),
        })
    }

    /// Jacobians of the pseudo-measurement with respect to the state (with
    /// the surface parameter held fixed) and to the additive noise.
    pub fn pseudo_measurement_jacobians(
        &self,
        state: &ObjectState<T>,
        measurement: &PointMeasurement<T>,
        assignment: &SurfaceAssignment<T>,
    ) -> Result<(DMatrix<T>, DMatrix<T>), ShapeError> {
        self.check(state)?;
        let (s, c) = state.yaw().sin_cos();
        let d = measurement.position - state.position();
        let body_x = c * d.x + s * d.y;
        let body_y = -s * d.x + c * d.y;
        let dim = state.dim();
        match *assignment {
            SurfaceAssignment::Extrusion { tau } => {
                let row = self.profile(state)?.basis_row(tau)?;
                let mut hx = DMatrix::zeros(2, dim);
                hx[(0, idx::X)] = -c;
                hx[(0, idx::Y)] = -s;
                hx[(0, idx::YAW)] = body_y;
                hx[(1, idx::Z)] = -T::one();
                for (i, b) in row.iter().enumerate() {
                    hx[(0, idx::CONTROL + 2 * i)] = -*b;
                    hx[(1, idx::CONTROL + 2 * i + 1)] = -*b;
                }
                let hv = DMatrix::from_row_slice(2, 3, &[-c, -s, T::zero(), T::zero(), T::zero(), -T::one()]);
                Ok((hx, hv))
            }
            SurfaceAssignment::CapPositiveY | SurfaceAssignment::CapNegativeY => {
                let half = if matches!(assignment, SurfaceAssignment::CapPositiveY) {
                    -T::lit(0.5)
                } else {
                    T::lit(0.5)
                };
                let mut hx = DMatrix::zeros(1, dim);
                hx[(0, idx::X)] = s;
                hx[(0, idx::Y)] = -c;
                hx[(0, idx::YAW)] = -body_x;
                hx[(0, idx::WIDTH)] = half;
                let hv = DMatrix::from_row_slice(1, 3, &[s, -c, T::zero()]);
                Ok((hx, hv))
            }
        }
    }

    /// Noise-free global surface points: uniform in (tau, y) on the
    /// extrusion, rejection-sampled inside the profile on the caps.
    pub fn sample_surface(
        &self,
        state: &ObjectState<T>,
        count_extrusion: usize,
        count_caps: usize,
        seed: u64,
    ) -> Result<Vec<Vector3<T>>, ShapeError> {
        Ok(self
            .sample_surface_detailed(state, count_extrusion, count_caps, seed)?
            .into_iter()
            .map(|s| s.global)
            .collect())
    }

    pub fn sample_surface_detailed(
        &self,
        state: &ObjectState<T>,
        count_extrusion: usize,
        count_caps: usize,
        seed: u64,
    ) -> Result<Vec<SurfaceSample<T>>, ShapeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count_extrusion + count_caps);
        if count_extrusion + count_caps == 0 {
            return Ok(out);
        }
        let context = self.context(state)?;
        let profile = &context.profile;
        let derivative = profile.derivative_curve();
        // Outward side of the travel direction for the profile's winding.
        let ccw = context.polygon.signed_area() >= T::zero();
        let half = state.width() * T::lit(0.5);
        let (start, end) = profile.domain();
        let rot = state.rotation();
        let uniform = |rng: &mut ChaCha8Rng, lo: T, hi: T| lo + (hi - lo) * T::lit(rng.random::<f64>());

        for _ in 0..count_extrusion {
            let tau = uniform(&mut rng, start, end);
            let y = uniform(&mut rng, -half, half);
            let p = profile.evaluate(tau)?;
            let mut tangent = derivative
                .as_ref()
                .map_or(Vector2::zeros(), |d| d.evaluate(tau).expect("tau in domain"));
            if tangent.norm() <= T::lit(1e-9) {
                let h = (end - start) * T::lit(1e-4);
                let a = profile.evaluate((tau - h).max(start))?;
                let b = profile.evaluate((tau + h).min(end))?;
                tangent = b - a;
            }
            let n2 = if tangent.norm() > T::zero() {
                let t = tangent.normalize();
                if ccw {
                    Vector2::new(t.y, -t.x)
                } else {
                    Vector2::new(-t.y, t.x)
                }
            } else {
                Vector2::zeros()
            };
            let body = Vector3::new(p.x, y, p.y);
            let normal_body = Vector3::new(n2.x, T::zero(), n2.y);
            out.push(SurfaceSample {
                global: state.to_global(&body),
                normal_global: rot * normal_body,
                body,
                normal_body,
                assignment: SurfaceAssignment::Extrusion { tau },
            });
        }

        let (lo, hi) = context.polygon.bounds();
        let mut produced = 0;
        let mut attempts = 0usize;
        while produced < count_caps {
            attempts += 1;
            if attempts > 1000 * (count_caps + 10) {
                return Err(ShapeError::DegenerateProfile);
            }
            let x = uniform(&mut rng, lo.x, hi.x);
            let z = uniform(&mut rng, lo.y, hi.y);
            let positive = rng.random::<bool>();
            if context.polygon.signed_distance(&Vector2::new(x, z)) > T::zero() {
                continue;
            }
            let (y, ny, assignment) = if positive {
                (half, T::one(), SurfaceAssignment::CapPositiveY)
            } else {
                (-half, -T::one(), SurfaceAssignment::CapNegativeY)
            };
            let body = Vector3::new(x, y, z);
            let normal_body = Vector3::new(T::zero(), ny, T::zero());
            out.push(SurfaceSample {
                global: state.to_global(&body),
                normal_global: rot * normal_body,
                body,
                normal_body,
                assignment,
            });
            produced += 1;
        }
        Ok(out)
    }
}
