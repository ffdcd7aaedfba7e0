//! B-spline basis functions and planar B-spline curves.
//!
//! Indices are zero-based: a curve with `n` control points has basis
//! functions `0..n` and a knot vector of length `n + degree + 1`. The valid
//! parameter domain is `[knots[degree], knots[n]]`; at its right end the last
//! non-empty knot span is treated as closed so that the basis still sums to one.

use nalgebra::Vector2;
use thiserror::Error;

use crate::scalar::Scalar;

/// Parameter values within this distance outside the domain are clamped.
pub const DOMAIN_CLAMP_TOLERANCE: f64 = 1e-12;

/// Samples used by the coarse scan in [`BSplineCurve::closest_tau`].
pub const CLOSEST_SCAN_SAMPLES: usize = 256;

/// Newton/bisection iterations per refined bracket in [`BSplineCurve::closest_tau`].
pub const CLOSEST_REFINE_ITERATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplineError {
    #[error("knot vector is not non-decreasing at index {0}")]
    UnsortedKnots(usize),
    #[error("knot vector contains a non-finite value")]
    NonFiniteKnot,
    #[error("expected {expected} knots for {control_points} control points of degree {degree}, got {got}")]
    KnotCount {
        expected: usize,
        got: usize,
        control_points: usize,
        degree: usize,
    },
    #[error("degree {degree} needs at least {} control points, got {got}", degree + 1)]
    TooFewControlPoints { degree: usize, got: usize },
    #[error("parameter domain [{start}, {end}] has zero width")]
    DegenerateDomain { start: f64, end: f64 },
    #[error("basis index {index} out of range for {count} basis functions")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("parameter {tau} lies outside the domain [{start}, {end}]")]
    OutOfDomain { tau: f64, start: f64, end: f64 },
}

/// A non-decreasing sequence of knots.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector<T: Scalar = f64> {
    knots: Vec<T>,
}

impl<T: Scalar> KnotVector<T> {
    pub fn new(knots: Vec<T>) -> Result<Self, SplineError> {
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(SplineError::NonFiniteKnot);
        }
        if let Some(i) = knots.windows(2).position(|w| w[0] > w[1]) {
            return Err(SplineError::UnsortedKnots(i + 1));
        }
        Ok(Self { knots })
    }

    /// Clamped uniform knots on `[0, 1]` for `control_points` basis functions
    /// of the given degree (first and last knot repeated `degree + 1` times).
    pub fn clamped_uniform(control_points: usize, degree: usize) -> Result<Self, SplineError> {
        if control_points < degree + 1 {
            return Err(SplineError::TooFewControlPoints {
                degree,
                got: control_points,
            });
        }
        let interior = control_points - degree - 1;
        let segments = T::from_usize_lossy(interior + 1);
        let mut knots = Vec::with_capacity(control_points + degree + 1);
        knots.extend(std::iter::repeat_n(T::zero(), degree + 1));
        for j in 1..=interior {
            knots.push(T::from_usize_lossy(j) / segments);
        }
        knots.extend(std::iter::repeat_n(T::one(), degree + 1));
        Ok(Self { knots })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Number of basis functions of the given degree these knots define.
    pub fn basis_count(&self, degree: usize) -> usize {
        self.knots.len().saturating_sub(degree + 1)
    }

    /// `[knots[degree], knots[n]]`, or `None` when the knots are too short.
    pub fn domain(&self, degree: usize) -> Option<(T, T)> {
        let n = self.basis_count(degree);
        if n == 0 || n <= degree {
            return None;
        }
        Some((self.knots[degree], self.knots[n]))
    }

    /// Index `k` of the knot span `[knots[k], knots[k+1])` containing `tau`,
    /// restricted to the valid domain. The right domain end maps to the last
    /// non-empty span. Returns `None` outside the domain.
    pub fn find_span(&self, degree: usize, tau: T) -> Option<usize> {
        let (start, end) = self.domain(degree)?;
        if tau < start || tau > end || start >= end {
            return None;
        }
        let n = self.basis_count(degree);
        let k = &self.knots;
        if tau == end {
            return (degree..n).rev().find(|&i| k[i] < k[i + 1]);
        }
        // Largest i in [degree, n) with k[i] <= tau.
        let (mut lo, mut hi) = (degree, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if k[mid] <= tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }

    /// Values of the `degree + 1` basis functions that may be non-zero on
    /// `span`, i.e. `B_{span-degree..=span, degree}(tau)`.
    fn nonzero_basis(&self, span: usize, degree: usize, tau: T) -> Vec<T> {
        let k = &self.knots;
        let mut values = vec![T::zero(); degree + 1];
        let mut left = vec![T::zero(); degree + 1];
        let mut right = vec![T::zero(); degree + 1];
        values[0] = T::one();
        for j in 1..=degree {
            left[j] = tau - k[span + 1 - j];
            right[j] = k[span + j] - tau;
            let mut saved = T::zero();
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == T::zero() {
                    T::zero()
                } else {
                    values[r] / denom
                };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        values
    }
}

/// `B_{i,d}(tau)` by the Cox-de Boor recursion, where `d` is also the degree
/// that fixes the valid domain (and hence the right-end convention).
///
/// Any recursion term whose denominator vanishes contributes zero.
pub fn basis<T: Scalar>(index: usize, degree: usize, knots: &KnotVector<T>, tau: T) -> Result<T, SplineError> {
    let count = knots.basis_count(degree);
    if index >= count {
        return Err(SplineError::IndexOutOfRange { index, count });
    }
    // The only degree-0 function that may be active when tau sits on the
    // right domain end.
    let closed_end = knots
        .domain(degree)
        .filter(|&(_, end)| tau == end)
        .and_then(|_| knots.find_span(degree, tau));
    Ok(cox_de_boor(index, degree, knots.as_slice(), tau, closed_end))
}

fn cox_de_boor<T: Scalar>(i: usize, d: usize, k: &[T], tau: T, closed_end: Option<usize>) -> T {
    if d == 0 {
        let active = match closed_end {
            Some(span) => i == span,
            None => k[i] <= tau && tau < k[i + 1],
        };
        return if active { T::one() } else { T::zero() };
    }
    let mut value = T::zero();
    let left_den = k[i + d] - k[i];
    if left_den != T::zero() {
        value += (tau - k[i]) / left_den * cox_de_boor(i, d - 1, k, tau, closed_end);
    }
    let right_den = k[i + d + 1] - k[i + 1];
    if right_den != T::zero() {
        value += (k[i + d + 1] - tau) / right_den * cox_de_boor(i + 1, d - 1, k, tau, closed_end);
    }
    value
}

/// A planar B-spline curve `s(tau) = sum_i B_{i,d}(tau) c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineCurve<T: Scalar = f64> {
    degree: usize,
    knots: KnotVector<T>,
    control_points: Vec<Vector2<T>>,
}

impl<T: Scalar> BSplineCurve<T> {
    pub fn new(degree: usize, knots: KnotVector<T>, control_points: Vec<Vector2<T>>) -> Result<Self, SplineError> {
        let n = control_points.len();
        if n < degree + 1 {
            return Err(SplineError::TooFewControlPoints { degree, got: n });
        }
        if knots.len() != n + degree + 1 {
            return Err(SplineError::KnotCount {
                expected: n + degree + 1,
                got: knots.len(),
                control_points: n,
                degree,
            });
        }
        let (start, end) = knots.domain(degree).expect("length checked above");
        if end <= start {
            return Err(SplineError::DegenerateDomain {
                start: start.as_f64(),
                end: end.as_f64(),
            });
        }
        Ok(Self {
            degree,
            knots,
            control_points,
        })
    }

    /// Curve on clamped uniform knots over `[0, 1]`.
    pub fn clamped(degree: usize, control_points: Vec<Vector2<T>>) -> Result<Self, SplineError> {
        let knots = KnotVector::clamped_uniform(control_points.len(), degree)?;
        Self::new(degree, knots, control_points)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &KnotVector<T> {
        &self.knots
    }

    pub fn control_points(&self) -> &[Vector2<T>] {
        &self.control_points
    }

    pub fn domain(&self) -> (T, T) {
        self.knots.domain(self.degree).expect("validated on construction")
    }

    /// Clamps `tau` into the domain if it lies within [`DOMAIN_CLAMP_TOLERANCE`]
    /// outside of it.
    pub fn clamp_tau(&self, tau: T) -> Result<T, SplineError> {
        let (start, end) = self.domain();
        let tol = T::lit(DOMAIN_CLAMP_TOLERANCE);
        if !tau.is_finite() || tau < start - tol || tau > end + tol {
            return Err(SplineError::OutOfDomain {
                tau: tau.as_f64(),
                start: start.as_f64(),
                end: end.as_f64(),
            });
        }
        Ok(tau.max(start).min(end))
    }

    /// Knot span index and the `degree + 1` non-zero basis values at `tau`.
    /// Basis value `j` belongs to control point `span - degree + j`.
    pub fn basis_at(&self, tau: T) -> Result<(usize, Vec<T>), SplineError> {
        let tau = self.clamp_tau(tau)?;
        let span = self
            .knots
            .find_span(self.degree, tau)
            .expect("clamped tau lies in the domain");
        Ok((span, self.knots.nonzero_basis(span, self.degree, tau)))
    }

    /// All `n` basis values at `tau`, zeros included.
    pub fn basis_row(&self, tau: T) -> Result<Vec<T>, SplineError> {
        let (span, values) = self.basis_at(tau)?;
        let mut row = vec![T::zero(); self.control_points.len()];
        let first = span - self.degree;
        row[first..=span].copy_from_slice(&values);
        Ok(row)
    }

    pub fn evaluate(&self, tau: T) -> Result<Vector2<T>, SplineError> {
        let (span, values) = self.basis_at(tau)?;
        let first = span - self.degree;
        Ok(values
            .iter()
            .zip(&self.control_points[first..=span])
            .fold(Vector2::zeros(), |acc, (&b, c)| acc + c * b))
    }

    /// The hodograph `ds/dtau` as a curve of one degree lower, or `None` for
    /// degree zero (whose derivative vanishes wherever it exists).
    pub fn derivative_curve(&self) -> Option<Self> {
        if self.degree == 0 {
            return None;
        }
        let d = self.degree;
        let k = self.knots.as_slice();
        let scale = T::from_usize_lossy(d);
        let points = self
            .control_points
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let den = k[i + d + 1] - k[i + 1];
                if den == T::zero() {
                    Vector2::zeros()
                } else {
                    (w[1] - w[0]) * (scale / den)
                }
            })
            .collect();
        let knots = KnotVector {
            knots: k[1..k.len() - 1].to_vec(),
        };
        Some(Self {
            degree: d - 1,
            knots,
            control_points: points,
        })
    }

    pub fn derivative(&self, tau: T) -> Result<Vector2<T>, SplineError> {
        match self.derivative_curve() {
            Some(curve) => curve.evaluate(tau),
            None => self.clamp_tau(tau).map(|_| Vector2::zeros()),
        }
    }

    /// Parameter of the curve point closest to `point`.
    ///
    /// A uniform scan over the domain locates every local minimum of the
    /// squared distance; each is refined by safeguarded Newton iterations on
    /// `(s(tau) - p) . s'(tau)`. Among equally close candidates the smallest
    /// parameter is returned.
    pub fn closest_tau(&self, point: &Vector2<T>) -> T {
        let first = self.derivative_curve();
        let second = first.as_ref().and_then(|c| c.derivative_curve());
        let eval = |c: &Self, t: T| c.evaluate(t).expect("tau kept inside domain");
        let dist2 = |t: T| (eval(self, t) - point).norm_squared();
        let slope = |t: T| match &first {
            Some(c) => (eval(self, t) - point).dot(&eval(c, t)),
            None => T::zero(),
        };
        let curvature = |t: T| {
            let d1 = first.as_ref().map_or(Vector2::zeros(), |c| eval(c, t));
            let d2 = second.as_ref().map_or(Vector2::zeros(), |c| eval(c, t));
            d1.norm_squared() + (eval(self, t) - point).dot(&d2)
        };

        let (start, end) = self.domain();
        let last = CLOSEST_SCAN_SAMPLES - 1;
        let step = (end - start) / T::from_usize_lossy(last);
        let sample_tau = |k: usize| if k == last { end } else { start + step * T::from_usize_lossy(k) };
        let scan: Vec<T> = (0..CLOSEST_SCAN_SAMPLES).map(|k| dist2(sample_tau(k))).collect();

        let mut candidates: Vec<(T, T)> = Vec::new();
        for k in 0..CLOSEST_SCAN_SAMPLES {
            let is_min = (k == 0 || scan[k] <= scan[k - 1]) && (k == last || scan[k] <= scan[k + 1]);
            if !is_min {
                continue;
            }
            let guess = sample_tau(k);
            candidates.push((guess, scan[k]));
            let mut lo = sample_tau(k.saturating_sub(1));
            let mut hi = sample_tau((k + 1).min(last));
            let (f_lo, f_hi) = (slope(lo), slope(hi));
            if f_lo < T::zero() && f_hi > T::zero() {
                let mut t = guess;
                for _ in 0..CLOSEST_REFINE_ITERATIONS {
                    let f = slope(t);
                    if f == T::zero() {
                        break;
                    }
                    if f < T::zero() {
                        lo = t;
                    } else {
                        hi = t;
                    }
                    let fp = curvature(t);
                    let newton = t - f / fp;
                    // Converged: the step is below the parameter resolution.
                    if fp > T::zero() && (newton - t).abs() <= T::default_epsilon() * T::lit(4.0) * (T::one() + t.abs()) {
                        break;
                    }
                    t = if fp > T::zero() && newton > lo && newton < hi {
                        newton
                    } else {
                        (lo + hi) * T::lit(0.5)
                    };
                }
                candidates.push((t, dist2(t)));
            } else {
                candidates.push((lo, dist2(lo)));
                candidates.push((hi, dist2(hi)));
            }
        }

        let best = candidates
            .iter()
            .map(|&(_, d)| d)
            .fold(T::max_value().expect("bounded float"), |a, b| a.min(b));
        let tie = best * T::lit(1e-12) + T::lit(1e-24);
        candidates
            .iter()
            .filter(|&&(_, d)| d <= best + tie)
            .map(|&(t, _)| t)
            .fold(end, |a, b| a.min(b))
    }

    /// Translates all control points by `offset`.
    pub fn translated(&self, offset: &Vector2<T>) -> Self {
        Self {
            degree: self.degree,
            knots: self.knots.clone(),
            control_points: self.control_points.iter().map(|c| c + offset).collect(),
        }
    }
}
