use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use splinefuse::ekf::GaussianEstimate;
use splinefuse::fusion::{
    covariance_intersection, fuse_ci, fuse_known_cross, intersect, known_cross, known_cross_gains,
    linear_fusion_covariance, optimize_omega, optimize_weight, FusionCost, FusionWeight,
};
use splinefuse::shape3d::{idx, ObjectState};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `L1 C L2ᵀ` with spectral norm of `C` at most one, so the joint covariance is PSD.
fn admissible_cross(rng: &mut ChaCha8Rng, p1: &DMatrix<f64>, p2: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p1.nrows();
    let c = random_matrix(rng, n, n);
    let norm = c.clone().singular_values().max();
    let c = c * (rng.random::<f64>() / norm);
    let l1 = p1.clone().cholesky().unwrap().l();
    let l2 = p2.clone().cholesky().unwrap().l();
    l1 * c * l2.transpose()
}

fn joint(p1: &DMatrix<f64>, p2: &DMatrix<f64>, cross: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p1.nrows();
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    j.view_mut((0, 0), (n, n)).copy_from(p1);
    j.view_mut((n, n), (n, n)).copy_from(p2);
    j.view_mut((0, n), (n, n)).copy_from(cross);
    j.view_mut((n, 0), (n, n)).copy_from(&cross.transpose());
    j
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues().min()
}

/// Intersected covariance by direct inversion.
fn ci_oracle(p1: &DMatrix<f64>, p2: &DMatrix<f64>, w: f64) -> DMatrix<f64> {
    let info = p1.clone().try_inverse().unwrap() * w + p2.clone().try_inverse().unwrap() * (1.0 - w);
    info.try_inverse().unwrap()
}

fn det_cost(p1: &DMatrix<f64>, p2: &DMatrix<f64>, w: f64) -> f64 {
    ci_oracle(p1, p2, w).determinant()
}

fn estimate(motion: [f64; 7], cov: DMatrix<f64>) -> GaussianEstimate<f64> {
    let pts: Vec<_> = (0..10).map(|i| Vector2::new(i as f64 * 0.4 - 2.0, (i as f64 * 0.7).sin())).collect();
    let s = ObjectState::new(motion, 2.0, &pts).unwrap();
    GaussianEstimate::new(s, cov, 0.0).unwrap()
}

#[test]
fn symmetric_pair_splits_evenly() {
    let p1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
    let p2 = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
    let w = optimize_weight(&p1, &p2, FusionCost::Det).unwrap().value();
    let grid = (0..=10_000)
        .map(|k| k as f64 * 1e-4)
        .min_by(|a, b| det_cost(&p1, &p2, *a).total_cmp(&det_cost(&p1, &p2, *b)))
        .unwrap();
    assert!((grid - 0.5).abs() < 1e-12);
    assert!((w - 0.5).abs() < 1e-6, "omega {w}");
    let zero = DVector::zeros(2);
    let (x, p) = intersect(&zero, &p1, &zero, &p2, FusionWeight::new(w).unwrap()).unwrap();
    assert!(x.amax() < 1e-15);
    assert!((p - DMatrix::identity(2, 2) * 1.6).amax() < 1e-9);
}

#[test]
fn dominant_estimate_takes_all() {
    let p1 = DMatrix::identity(3, 3);
    let p2 = DMatrix::identity(3, 3) * 4.0;
    assert_eq!(optimize_weight(&p1, &p2, FusionCost::Det).unwrap().value(), 1.0);
    assert_eq!(optimize_weight(&p2, &p1, FusionCost::Det).unwrap().value(), 0.0);
    assert_eq!(optimize_weight(&p1, &p2, FusionCost::Trace).unwrap().value(), 1.0);
}

#[test]
fn optimum_beats_every_grid_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let n = 1 + case % 6;
        let p1 = random_spd(&mut rng, n);
        let p2 = random_spd(&mut rng, n);
        for cost in [FusionCost::Det, FusionCost::Trace] {
            let f = |w: f64| {
                let p = ci_oracle(&p1, &p2, w);
                match cost {
                    FusionCost::Det => p.determinant(),
                    FusionCost::Trace => p.trace(),
                }
            };
            let w = optimize_weight(&p1, &p2, cost).unwrap().value();
            let best = f(w);
            let mut grid_best = (0.0, f64::INFINITY);
            for k in 0..=1000 {
                let g = k as f64 * 1e-3;
                let v = f(g);
                assert!(best <= v * (1.0 + 1e-9), "case {case} {cost:?}: f({w}) = {best} > f({g}) = {v}");
                if v < grid_best.1 {
                    grid_best = (g, v);
                }
            }
            // Strictly convex cost, so the grid minimizer is within one step.
            assert!((w - grid_best.0).abs() <= 1e-3 + 1e-12, "case {case}: {w} vs grid {}", grid_best.0);
        }
    }
}

#[test]
fn endpoints_reproduce_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = estimate([1.0, 2.0, 3.0, 0.4, 0.1, 0.7, 0.0], random_spd(&mut rng, 28));
    let b = estimate([1.3, 2.1, 2.5, 0.5, 0.0, 0.8, 0.1], random_spd(&mut rng, 28));
    assert_eq!(covariance_intersection(&a, &b, FusionWeight::new(1.0).unwrap()).unwrap(), a);
    let at_b = covariance_intersection(&a, &b, FusionWeight::new(0.0).unwrap()).unwrap();
    assert_eq!(at_b.mean, b.mean);
    assert_eq!(at_b.covariance, b.covariance);
}

#[test]
fn determinant_never_exceeds_the_better_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let n = 1 + case % 6;
        let p1 = random_spd(&mut rng, n);
        let p2 = random_spd(&mut rng, n);
        let w = optimize_weight(&p1, &p2, FusionCost::Det).unwrap();
        let (_, p) = intersect(&DVector::zeros(n), &p1, &DVector::zeros(n), &p2, w).unwrap();
        let bound = p1.determinant().min(p2.determinant());
        assert!(p.determinant() <= bound + 1e-12 + 1e-12 * bound, "case {case}");
    }
    // Same through the full-state entry point.
    let a = estimate([0.0; 7], random_spd(&mut rng, 28));
    let b = estimate([0.1; 7], random_spd(&mut rng, 28));
    let r = fuse_ci(&a, &b).unwrap();
    let log_bound = [&a, &b]
        .iter()
        .map(|e| e.covariance.clone().cholesky().unwrap().l().diagonal().map(f64::ln).sum() * 2.0)
        .fold(f64::INFINITY, f64::min);
    assert!(r.log_cost <= log_bound + 1e-9);
    assert!(r.cost > 0.0 && !r.gated);
}

#[test]
fn opposite_headings_fuse_near_pi() {
    let mut cov = DMatrix::identity(28, 28);
    cov[(idx::YAW, idx::YAW)] = 1e-4;
    let a = estimate([0.0, 0.0, 5.0, 3.1, 0.0, 0.7, 0.0], cov.clone());
    let b = estimate([0.0, 0.0, 5.0, -3.1, 0.0, 0.7, 0.0], cov);
    for (x, y) in [(&a, &b), (&b, &a)] {
        let yaw = fuse_ci(x, y).unwrap().fused.mean.yaw();
        let to_pi = (yaw.abs() - std::f64::consts::PI).abs();
        assert!(to_pi < 0.05, "fused yaw {yaw}");
        let known = fuse_known_cross(x, y, &DMatrix::zeros(28, 28)).unwrap().mean.yaw();
        assert!((known.abs() - std::f64::consts::PI).abs() < 0.05, "known-cross yaw {known}");
    }
}

#[test]
fn full_turn_on_heading_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = estimate([0.0, 0.0, 5.0, 3.0, 0.0, 0.7, 0.0], random_spd(&mut rng, 28));
    let cov = random_spd(&mut rng, 28);
    for yaw in [-3.05, 3.05, 0.5] {
        let b = estimate([0.2, 0.0, 5.0, yaw, 0.0, 0.7, 0.0], cov.clone());
        let mut turned_vec = b.mean.as_vector().clone();
        turned_vec[idx::YAW] += 2.0 * std::f64::consts::PI;
        let turned = GaussianEstimate::new(ObjectState::from_vector(turned_vec).unwrap(), cov.clone(), 0.0).unwrap();
        let r1 = fuse_ci(&a, &b).unwrap();
        let r2 = fuse_ci(&a, &turned).unwrap();
        assert!((r1.fused.mean.as_vector() - r2.fused.mean.as_vector()).amax() < 1e-9);
        assert!((r1.fused.covariance - r2.fused.covariance).amax() < 1e-9);
    }
}

#[test]
fn control_point_permutation_is_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = estimate([1.0, 2.0, 3.0, 0.4, 0.1, 0.7, 0.0], random_spd(&mut rng, 28));
    let mut b = estimate([1.3, 2.1, 2.5, 0.5, 0.0, 0.8, 0.1], random_spd(&mut rng, 28));
    let mut bv = b.mean.as_vector().clone();
    for i in idx::CONTROL..28 {
        bv[i] += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    b.mean = ObjectState::from_vector(bv).unwrap();

    let order = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
    let mut perm: Vec<usize> = (0..idx::CONTROL).collect();
    for &o in &order {
        perm.push(idx::CONTROL + 2 * o);
        perm.push(idx::CONTROL + 2 * o + 1);
    }
    let permute = |e: &GaussianEstimate<f64>| {
        let v = DVector::from_fn(28, |i, _| e.mean.as_vector()[perm[i]]);
        let p = DMatrix::from_fn(28, 28, |i, j| e.covariance[(perm[i], perm[j])]);
        GaussianEstimate::new(ObjectState::from_vector(v).unwrap(), p, 0.0).unwrap()
    };
    let fused = fuse_ci(&a, &b).unwrap();
    let fused_perm = fuse_ci(&permute(&a), &permute(&b)).unwrap();
    let expected = permute(&fused.fused);
    // The weight minimizes a cost that is flat at its optimum, so roundoff in
    // the permuted sums moves it by about the square root of machine epsilon.
    assert!((fused.weight.value() - fused_perm.weight.value()).abs() < 1e-6);
    assert!((fused_perm.fused.mean.as_vector() - expected.mean.as_vector()).amax() < 1e-6);
    assert!((fused_perm.fused.covariance - expected.covariance).amax() < 1e-6);
}

#[test]
fn known_cross_trivial_cases() {
    let x1 = DVector::from_vec(vec![1.0, 0.0, -2.0]);
    let x2 = DVector::from_vec(vec![3.0, 2.0, 0.0]);
    let eye = DMatrix::identity(3, 3);
    let (x, p) = known_cross(&x1, &eye, &x2, &eye, &DMatrix::zeros(3, 3)).unwrap();
    assert!((x - (&x1 + &x2) * 0.5).amax() < 1e-15);
    assert!((p - &eye * 0.5).amax() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p1 = random_spd(&mut rng, 3);
    let (x, p) = known_cross(&x1, &p1, &x1, &p1, &p1).unwrap();
    assert!((x - &x1).amax() < 1e-12);
    assert!((p - &p1).amax() < 1e-12);
}

#[test]
fn known_cross_matches_joint_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 3;
    for case in 0..100 {
        let sigma = random_spd(&mut rng, 2 * n);
        let p1 = sigma.view((0, 0), (n, n)).into_owned();
        let p2 = sigma.view((n, n), (n, n)).into_owned();
        let cross = sigma.view((0, n), (n, n)).into_owned();
        let x1 = random_vector(&mut rng, n);
        let x2 = random_vector(&mut rng, n);

        // Generalized least squares on the stacked observation [x1; x2] = [I; I] x + e.
        let h = DMatrix::from_fn(2 * n, n, |i, j| if i % n == j { 1.0 } else { 0.0 });
        let z = DVector::from_fn(2 * n, |i, _| if i < n { x1[i] } else { x2[i - n] });
        let si = sigma.clone().try_inverse().unwrap();
        let p_gls = (h.transpose() * &si * &h).try_inverse().unwrap();
        let x_gls = &p_gls * h.transpose() * &si * z;

        let (x, p) = known_cross(&x1, &p1, &x2, &p2, &cross).unwrap();
        assert!((&x - x_gls).amax() < 1e-9, "case {case}");
        assert!((&p - &p_gls).amax() < 1e-9, "case {case}");
        assert!(min_eig(&(&p1 - &p)) > -1e-9);
        assert!(min_eig(&(&p2 - &p)) > -1e-9);
    }
}

#[test]
fn intersection_is_conservative_for_admissible_cross_covariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for pair in 0..100 {
        let n = 1 + pair % 6;
        let p1 = random_spd(&mut rng, n);
        let p2 = random_spd(&mut rng, n);
        let w = optimize_weight(&p1, &p2, FusionCost::Det).unwrap();
        let (_, p_ci) = intersect(&DVector::zeros(n), &p1, &DVector::zeros(n), &p2, w).unwrap();
        let omega = w.value();
        // Gains the intersection applies to each input.
        let g1 = &p_ci * p1.clone().try_inverse().unwrap() * omega;
        let g2 = &p_ci * p2.clone().try_inverse().unwrap() * (1.0 - omega);
        for draw in 0..50 {
            let cross = admissible_cross(&mut rng, &p1, &p2);
            assert!(min_eig(&joint(&p1, &p2, &cross)) > -1e-9);
            let (k, l) = known_cross_gains(&p1, &p2, &cross).unwrap();
            let p_opt = linear_fusion_covariance(&k, &l, &p1, &p2, &cross);
            let m = min_eig(&(&p_ci - &p_opt));
            assert!(m >= -1e-9, "pair {pair} draw {draw}: min eigenvalue {m}");
            // The actual error covariance of the intersected estimate is also covered.
            let p_actual = linear_fusion_covariance(&g1, &g2, &p1, &p2, &cross);
            let m = min_eig(&(&p_ci - &p_actual));
            assert!(m >= -1e-9, "pair {pair} draw {draw}: actual min eigenvalue {m}");
        }
    }
}

#[test]
fn estimate_level_weight_matches_matrix_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = estimate([0.0; 7], random_spd(&mut rng, 28));
    let b = estimate([0.0; 7], random_spd(&mut rng, 28));
    let w1 = optimize_omega(&a, &b, FusionCost::Det).unwrap();
    let w2 = optimize_weight(&a.covariance, &b.covariance, FusionCost::Det).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(fuse_ci(&a, &b).unwrap().weight, w1);
}
