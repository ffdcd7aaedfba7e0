//! Track-to-track fusion.
//!
//! Covariance intersection combines two estimates whose cross-correlation is
//! unknown. The optimal fuser for a known cross-covariance is kept alongside
//! as a reference.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::ekf::{symmetrized, GaussianEstimate};
use crate::scalar::{wrap_angle, Scalar};
use crate::shape3d::{idx, ObjectState, ShapeError};

/// Golden-section iterations of the weight search.
pub const GOLDEN_ITERATIONS: usize = 60;
/// Coarse grid that brackets the golden-section search.
pub const OMEGA_GRID: usize = 100;
/// Added to a covariance whose Cholesky factorization fails.
pub const REGULARIZATION: f64 = 1e-12;
/// Covariances above this condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("estimates have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is singular or too badly conditioned")]
    Singular,
    #[error("joint covariance is not positive semi-definite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("fusion weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// The covariance intersection weight on the first estimate.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FusionWeight<T: Scalar = f64>(T);

impl<T: Scalar> FusionWeight<T> {
    pub fn new(omega: T) -> Result<Self, FusionError> {
        if omega >= T::zero() && omega <= T::one() {
            Ok(Self(omega))
        } else {
            Err(FusionError::InvalidWeight(omega.as_f64()))
        }
    }

    pub fn value(self) -> T {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionCost {
    #[default]
    Det,
    Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport<T: Scalar = f64> {
    pub fused: GaussianEstimate<T>,
    pub weight: FusionWeight<T>,
    /// Determinant of the fused covariance.
    pub cost: T,
    /// Natural log of `cost`, finite even when the determinant underflows.
    pub log_cost: T,
    /// Set when fusion was skipped and `fused` is a carried estimate.
    pub gated: bool,
}

impl<T: Scalar> FusionReport<T> {
    /// Report for a frame without fusion; the carried estimate gets full weight.
    pub fn carried(estimate: GaussianEstimate<T>) -> Self {
        let log_cost = log_det(&estimate.covariance).unwrap_or(T::zero() / T::zero());
        Self {
            fused: estimate,
            weight: FusionWeight(T::one()),
            cost: log_cost.exp(),
            log_cost,
            gated: true,
        }
    }
}

/// Fusion takes place only when both trackers saw enough points this frame.
pub fn gate_fusion(a_points: usize, b_points: usize, min_points: usize) -> bool {
    a_points >= min_points && b_points >= min_points
}

fn check_dims<T: Scalar>(a: &GaussianEstimate<T>, b: &GaussianEstimate<T>) -> Result<(), FusionError> {
    for e in [a, b] {
        if e.covariance.nrows() != e.dim() || e.covariance.ncols() != e.dim() {
            return Err(FusionError::DimensionMismatch(e.dim(), e.covariance.nrows()));
        }
    }
    if a.dim() != b.dim() {
        return Err(FusionError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// Mean of `b` with its yaw moved into the chart centred at `a`'s yaw.
pub fn aligned_mean<T: Scalar>(a: &ObjectState<T>, b: &ObjectState<T>) -> DVector<T> {
    let mut v = b.as_vector().clone();
    v[idx::YAW] = a.yaw() + wrap_angle(b.yaw() - a.yaw());
    v
}

fn factor<T: Scalar>(m: &DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    symmetrized(m).cholesky()
}

/// Inverse of a covariance, regularized once if the factorization fails.
pub fn information<T: Scalar>(p: &DMatrix<T>) -> Result<DMatrix<T>, FusionError> {
    let n = p.nrows();
    let mut sym = symmetrized(p);
    if sym.clone().cholesky().is_none() {
        sym += DMatrix::identity(n, n) * T::lit(REGULARIZATION);
    }
    let eig = sym.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > T::zero()) || !(hi / lo < T::lit(MAX_CONDITION)) {
        return Err(FusionError::Singular);
    }
    sym.cholesky().map(|c| c.inverse()).ok_or(FusionError::Singular)
}

fn log_det<T: Scalar>(p: &DMatrix<T>) -> Option<T> {
    let c = factor(p)?;
    Some(c.l().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * T::lit(2.0))
}

struct Prepared<T: Scalar> {
    x1: DVector<T>,
    x2: DVector<T>,
    i1: DMatrix<T>,
    i2: DMatrix<T>,
}

impl<T: Scalar> Prepared<T> {
    fn new(a: &GaussianEstimate<T>, b: &GaussianEstimate<T>) -> Result<Self, FusionError> {
        check_dims(a, b)?;
        Self::from_parts(a.mean.as_vector().clone(), &a.covariance, aligned_mean(&a.mean, &b.mean), &b.covariance)
    }

    fn from_parts(x1: DVector<T>, p1: &DMatrix<T>, x2: DVector<T>, p2: &DMatrix<T>) -> Result<Self, FusionError> {
        let n = x1.len();
        if x2.len() != n || [p1, p2].iter().any(|p| p.nrows() != n || p.ncols() != n) {
            return Err(FusionError::DimensionMismatch(n, x2.len()));
        }
        Ok(Self {
            x1,
            x2,
            i1: information(p1)?,
            i2: information(p2)?,
        })
    }

    fn intersect(&self, p1: &DMatrix<T>, p2: &DMatrix<T>, omega: T) -> Result<(DVector<T>, DMatrix<T>), FusionError> {
        if omega == T::one() {
            return Ok((self.x1.clone(), p1.clone()));
        }
        if omega == T::zero() {
            return Ok((self.x2.clone(), p2.clone()));
        }
        let p = factor(&self.joint_information(omega)).ok_or(FusionError::Singular)?.inverse();
        let x = &p * (&self.i1 * &self.x1 * omega + &self.i2 * &self.x2 * (T::one() - omega));
        Ok((x, symmetrized(&p)))
    }

    fn joint_information(&self, omega: T) -> DMatrix<T> {
        &self.i1 * omega + &self.i2 * (T::one() - omega)
    }

    fn cost(&self, omega: T, cost: FusionCost) -> T {
        let Some(c) = factor(&self.joint_information(omega)) else {
            return T::max_value().expect("bounded float");
        };
        match cost {
            // log det of the fused covariance is minus that of the information.
            FusionCost::Det => -c.l().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * T::lit(2.0),
            FusionCost::Trace => c.inverse().trace(),
        }
    }

    fn optimize(&self, cost: FusionCost) -> FusionWeight<T> {
        let f = |w: T| self.cost(w, cost);
        let grid: Vec<(T, T)> = (0..=OMEGA_GRID)
            .map(|k| {
                let w = T::from_usize_lossy(k) / T::from_usize_lossy(OMEGA_GRID);
                (w, f(w))
            })
            .collect();
        let lo = grid.iter().map(|g| g.1).fold(T::max_value().expect("bounded float"), |m, c| m.min(c));
        let hi = grid.iter().map(|g| g.1).fold(-T::max_value().expect("bounded float"), |m, c| m.max(c));
        if hi - lo <= T::lit(1e-12) * (T::one() + lo.abs()) {
            return FusionWeight(T::lit(0.5));
        }
        // First grid minimum; golden-section refines inside its neighbours.
        let k = grid.iter().position(|g| g.1 == lo).expect("grid minimum exists");
        let (mut a, mut b) = (grid[k.saturating_sub(1)].0, grid[(k + 1).min(OMEGA_GRID)].0);
        let r = T::lit((5f64.sqrt() - 1.0) / 2.0);
        let mut c = b - (b - a) * r;
        let mut d = a + (b - a) * r;
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..GOLDEN_ITERATIONS {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - (b - a) * r;
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + (b - a) * r;
                fd = f(d);
            }
        }
        let mid = (a + b) * T::lit(0.5);
        let mut best = (grid[k].0, lo);
        for w in [mid, T::zero(), T::one()] {
            let v = f(w);
            if v < best.1 {
                best = (w, v);
            }
        }
        FusionWeight(best.0)
    }

    fn combine(&self, a: &GaussianEstimate<T>, b: &GaussianEstimate<T>, omega: T) -> Result<GaussianEstimate<T>, FusionError> {
        if omega == T::one() {
            return Ok(a.clone());
        }
        let (x, p) = self.intersect(&a.covariance, &b.covariance, omega)?;
        Ok(GaussianEstimate {
            mean: ObjectState::from_vector(x)?,
            covariance: p,
            timestamp: a.timestamp,
        })
    }
}

/// Weight on the first of two plain covariances, as in [`optimize_omega`].
pub fn optimize_weight<T: Scalar>(p1: &DMatrix<T>, p2: &DMatrix<T>, cost: FusionCost) -> Result<FusionWeight<T>, FusionError> {
    let n = p1.nrows();
    Ok(Prepared::from_parts(DVector::zeros(n), p1, DVector::zeros(n), p2)?.optimize(cost))
}

/// Covariance intersection of plain vectors; `omega` weighs the first input.
pub fn intersect<T: Scalar>(
    x1: &DVector<T>,
    p1: &DMatrix<T>,
    x2: &DVector<T>,
    p2: &DMatrix<T>,
    weight: FusionWeight<T>,
) -> Result<(DVector<T>, DMatrix<T>), FusionError> {
    Prepared::from_parts(x1.clone(), p1, x2.clone(), p2)?.intersect(p1, p2, weight.value())
}

/// Weight in `[0, 1]` minimizing the chosen cost of the intersected covariance.
///
/// Returns 0.5 when the cost does not depend on the weight.
pub fn optimize_omega<T: Scalar>(
    a: &GaussianEstimate<T>,
    b: &GaussianEstimate<T>,
    cost: FusionCost,
) -> Result<FusionWeight<T>, FusionError> {
    Ok(Prepared::new(a, b)?.optimize(cost))
}

/// Covariance intersection with a given weight on `a`.
pub fn covariance_intersection<T: Scalar>(
    a: &GaussianEstimate<T>,
    b: &GaussianEstimate<T>,
    weight: FusionWeight<T>,
) -> Result<GaussianEstimate<T>, FusionError> {
    Prepared::new(a, b)?.combine(a, b, weight.value())
}

/// Covariance intersection with the determinant-minimizing weight.
pub fn fuse_ci<T: Scalar>(a: &GaussianEstimate<T>, b: &GaussianEstimate<T>) -> Result<FusionReport<T>, FusionError> {
    fuse_ci_with(a, b, FusionCost::Det)
}

pub fn fuse_ci_with<T: Scalar>(
    a: &GaussianEstimate<T>,
    b: &GaussianEstimate<T>,
    cost: FusionCost,
) -> Result<FusionReport<T>, FusionError> {
    let prep = Prepared::new(a, b)?;
    let weight = prep.optimize(cost);
    let fused = prep.combine(a, b, weight.value())?;
    let log_cost = log_det(&fused.covariance).ok_or(FusionError::Singular)?;
    Ok(FusionReport {
        fused,
        weight,
        cost: log_cost.exp(),
        log_cost,
        gated: false,
    })
}

/// Minimum-variance fusion of two estimates whose error cross-covariance
/// `cross = E[e_a e_bᵀ]` is known.
///
/// The difference covariance is inverted with a pseudo-inverse so that fully
/// correlated inputs are accepted.
pub fn fuse_known_cross<T: Scalar>(
    a: &GaussianEstimate<T>,
    b: &GaussianEstimate<T>,
    cross: &DMatrix<T>,
) -> Result<GaussianEstimate<T>, FusionError> {
    check_dims(a, b)?;
    let x2 = aligned_mean(&a.mean, &b.mean);
    let (x, p) = known_cross(a.mean.as_vector(), &a.covariance, &x2, &b.covariance, cross)?;
    Ok(GaussianEstimate {
        mean: ObjectState::from_vector(x)?,
        covariance: p,
        timestamp: a.timestamp,
    })
}

/// [`fuse_known_cross`] on plain vectors.
pub fn known_cross<T: Scalar>(
    x1: &DVector<T>,
    p1: &DMatrix<T>,
    x2: &DVector<T>,
    p2: &DMatrix<T>,
    cross: &DMatrix<T>,
) -> Result<(DVector<T>, DMatrix<T>), FusionError> {
    let n = x1.len();
    if x2.len() != n || [p1, p2, cross].iter().any(|p| p.nrows() != n || p.ncols() != n) {
        return Err(FusionError::DimensionMismatch(n, x2.len()));
    }
    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    joint.view_mut((0, 0), (n, n)).copy_from(p1);
    joint.view_mut((n, n), (n, n)).copy_from(p2);
    joint.view_mut((0, n), (n, n)).copy_from(cross);
    joint.view_mut((n, 0), (n, n)).copy_from(&cross.transpose());
    let eig = symmetrized(&joint).symmetric_eigenvalues();
    let scale = eig.iter().fold(T::one(), |m, e| m.max(e.abs()));
    let min = eig.min();
    if min < -T::lit(1e-9) * scale {
        return Err(FusionError::NotPsd(min.as_f64()));
    }

    let u = p1 - cross;
    let gain = &u * difference_pinv(p1, p2, cross)?;
    let x = x1 + &gain * (x2 - x1);
    let p = p1 - &gain * u.transpose();
    Ok((x, symmetrized(&p)))
}

/// Pseudo-inverse of the covariance of `e_a - e_b`.
fn difference_pinv<T: Scalar>(p1: &DMatrix<T>, p2: &DMatrix<T>, cross: &DMatrix<T>) -> Result<DMatrix<T>, FusionError> {
    let d = symmetrized(&(p1 + p2 - cross - cross.transpose()));
    let scale = d.amax().max(T::one());
    d.pseudo_inverse(T::lit(1e-12) * scale).map_err(|_| FusionError::Singular)
}

/// Gain pair `(K, L)` of the known-cross fuser, `x = K x_a + L x_b`.
pub fn known_cross_gains<T: Scalar>(
    a_cov: &DMatrix<T>,
    b_cov: &DMatrix<T>,
    cross: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>), FusionError> {
    let n = a_cov.nrows();
    let l = (a_cov - cross) * difference_pinv(a_cov, b_cov, cross)?;
    Ok((DMatrix::identity(n, n) - &l, l))
}

/// Error covariance of `x = K x_a + L x_b` for the given joint covariance.
pub fn linear_fusion_covariance<T: Scalar>(
    k: &DMatrix<T>,
    l: &DMatrix<T>,
    a_cov: &DMatrix<T>,
    b_cov: &DMatrix<T>,
    cross: &DMatrix<T>,
) -> DMatrix<T> {
    let kl = k * cross * l.transpose();
    symmetrized(&(k * a_cov * k.transpose() + l * b_cov * l.transpose() + &kl + kl.transpose()))
}
