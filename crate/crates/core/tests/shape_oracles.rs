use nalgebra::{DVector, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splinefuse::shape3d::{idx, ObjectState, PointMeasurement, ShapeModel, SurfaceAssignment};

fn box_profile() -> Vec<Vector2<f64>> {
    let (a, b) = (2.0, 0.75);
    [(-a, -b), (-a, 0.0), (-a, b), (-a, b), (-a, b), (a, b), (a, b), (a, b), (a, 0.0), (a, -b)]
        .iter()
        .map(|&(x, z)| Vector2::new(x, z))
        .collect()
}

fn smooth_profile() -> Vec<Vector2<f64>> {
    [(-2.25, -0.75), (-2.3, -0.05), (-2.05, 0.2), (-1.3, 0.3), (-0.9, 0.85), (0.4, 0.85), (1.0, 0.3), (2.2, 0.2), (2.35, -0.2), (2.25, -0.75)]
        .iter()
        .map(|&(x, z)| Vector2::new(x, z))
        .collect()
}

fn model() -> ShapeModel<f64> {
    ShapeModel::new(10, 3).unwrap()
}

#[derive(Debug, PartialEq)]
enum Sheet {
    Extrusion,
    CapPos,
    CapNeg,
}

/// Exact 3D distances to the extrusion sheet and both caps by dense sampling.
fn oracle_sheet(state: &ObjectState<f64>, body: &Vector3<f64>) -> Sheet {
    let curve = model().profile(state).unwrap();
    let dense: Vec<Vector2<f64>> = (0..=4000).map(|i| curve.evaluate(i as f64 / 4000.0).unwrap()).collect();
    let xz = Vector2::new(body.x, body.z);
    let half = state.width() / 2.0;
    let curve_d = dense.iter().map(|p| (p - xz).norm()).fold(f64::MAX, f64::min);
    let overflow = (body.y.abs() - half).max(0.0);
    let d_ext = (curve_d * curve_d + overflow * overflow).sqrt();

    // Region bounded by the dense curve and the closing chord.
    let mut inside = false;
    let n = dense.len();
    let mut boundary = f64::MAX;
    for i in 0..n {
        let (a, b) = (dense[i], dense[(i + 1) % n]);
        if (a.y > xz.y) != (b.y > xz.y) && xz.x < a.x + (xz.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
        let ab = b - a;
        let t = ((xz - a).dot(&ab) / ab.norm_squared().max(1e-300)).clamp(0.0, 1.0);
        boundary = boundary.min((a + ab * t - xz).norm());
    }
    let cap = |plane: f64| {
        let dy = body.y - plane;
        if inside { dy.abs() } else { (dy * dy + boundary * boundary).sqrt() }
    };
    let (dp, dn) = (cap(half), cap(-half));
    if d_ext <= dp && d_ext <= dn {
        Sheet::Extrusion
    } else if dp <= dn {
        Sheet::CapPos
    } else {
        Sheet::CapNeg
    }
}

#[test]
fn assignment_matches_brute_force_on_box_surface() {
    let m = model();
    let state = ObjectState::new([4.0, -2.0, 3.0, 2.1, 0.0, 0.75, 0.0], 2.0, &box_profile()).unwrap();
    let samples = m.sample_surface_detailed(&state, 500, 500, 77).unwrap();
    assert_eq!(samples.len(), 1000);
    let profile = m.profile(&state).unwrap();
    for s in &samples {
        let body = state.to_body(&s.global);
        let got = match m.assign_surface(&state, &profile, &body) {
            SurfaceAssignment::Extrusion { .. } => Sheet::Extrusion,
            SurfaceAssignment::CapPositiveY => Sheet::CapPos,
            SurfaceAssignment::CapNegativeY => Sheet::CapNeg,
        };
        assert_eq!(got, oracle_sheet(&state, &body), "body point {body}");
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> ObjectState<f64> {
    let cps: Vec<_> = smooth_profile()
        .iter()
        .map(|c| c + Vector2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let motion = [
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        rng.random_range(0.0..10.0),
        rng.random_range(-3.1..3.1),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.0..2.0),
        rng.random_range(-0.2..0.2),
    ];
    ObjectState::new(motion, rng.random_range(1.5..2.5), &cps).unwrap()
}

fn perturbed(state: &ObjectState<f64>, i: usize, h: f64) -> ObjectState<f64> {
    let mut v = state.as_vector().clone();
    v[i] += h;
    ObjectState::from_vector(v).unwrap()
}

#[test]
fn pseudo_measurement_jacobians_match_central_differences() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-6;
    for case in 0..100 {
        let state = random_state(&mut rng);
        let asg = match case % 3 {
            0 => SurfaceAssignment::Extrusion { tau: rng.random_range(0.0..1.0) },
            1 => SurfaceAssignment::CapPositiveY,
            _ => SurfaceAssignment::CapNegativeY,
        };
        let body = Vector3::new(rng.random_range(-2.5..2.5), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
        let meas = PointMeasurement::with_std(state.to_global(&body), Vector3::repeat(0.05));
        let (hx, hv) = m.pseudo_measurement_jacobians(&state, &meas, &asg).unwrap();
        for i in 0..state.dim() {
            let fd = (m.pseudo_measurement(&perturbed(&state, i, h), &meas, &asg).unwrap()
                - m.pseudo_measurement(&perturbed(&state, i, -h), &meas, &asg).unwrap())
                / (2.0 * h);
            for r in 0..fd.len() {
                let an = hx[(r, i)];
                assert!((fd[r] - an).abs() <= 1e-5 * an.abs().max(1.0), "state {i} row {r}: fd {} an {an}", fd[r]);
            }
        }
        for j in 0..3 {
            let mut dv = Vector3::zeros();
            dv[j] = h;
            let fd = (m.pseudo_measurement_with_noise(&state, &meas.position, &dv, &asg).unwrap()
                - m.pseudo_measurement_with_noise(&state, &meas.position, &-dv, &asg).unwrap())
                / (2.0 * h);
            for r in 0..fd.len() {
                assert!((fd[r] - hv[(r, j)]).abs() <= 1e-5 * hv[(r, j)].abs().max(1.0));
            }
        }
    }
}

#[test]
fn polygon_area_converges_under_refinement() {
    let m = model();
    let state = ObjectState::new([0.0; 7], 2.0, &smooth_profile()).unwrap();
    let coarse = m.side_view_polygon(&state, 16).unwrap().area();
    let fine = m.side_view_polygon(&state, 32).unwrap().area();
    assert!((coarse - fine).abs() / fine < 5e-4, "{coarse} vs {fine}");
}

#[test]
fn polygon_is_body_frame() {
    let m = model();
    let a = ObjectState::new([0.0; 7], 2.0, &smooth_profile()).unwrap();
    let b = a.with_position(&Vector3::new(10.0, -4.0, 2.0)).with_yaw(1.0);
    assert_eq!(m.side_view_polygon(&a, 8).unwrap(), m.side_view_polygon(&b, 8).unwrap());
}

proptest! {
    #[test]
    fn round_trip_body_global(
        x in -50.0f64..50.0, y in -50.0f64..50.0, z in -2.0f64..2.0, yaw in -3.0f64..3.0,
        px in -60.0f64..60.0, py in -60.0f64..60.0, pz in -5.0f64..5.0,
    ) {
        let s = ObjectState::new([x, y, 1.0, yaw, 0.0, z, 0.0], 2.0, &smooth_profile()).unwrap();
        let p = Vector3::new(px, py, pz);
        prop_assert!((s.to_global(&s.to_body(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn residual_invariant_under_rigid_planar_motion(
        seed in 0u64..1000, angle in -3.0f64..3.0, tx in -30.0f64..30.0, ty in -30.0f64..30.0, tz in -2.0f64..2.0,
        which in 0usize..3,
    ) {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(&mut rng);
        let meas = PointMeasurement::with_std(
            state.to_global(&Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.2..1.2), 0.3)),
            Vector3::repeat(0.05),
        );
        let asg = [SurfaceAssignment::Extrusion { tau: 0.42 }, SurfaceAssignment::CapPositiveY, SurfaceAssignment::CapNegativeY][which];
        let rot = splinefuse::shape3d::yaw_rotation(angle);
        let shift = Vector3::new(tx, ty, tz);
        let moved_state = state.with_position(&(rot * state.position() + shift)).with_yaw(state.yaw() + angle);
        let moved_meas = PointMeasurement::new(rot * meas.position + shift, meas.noise);
        let r0 = m.pseudo_measurement(&state, &meas, &asg).unwrap();
        let r1 = m.pseudo_measurement(&moved_state, &moved_meas, &asg).unwrap();
        prop_assert!((r0 - r1).norm() < 1e-9);
    }

    #[test]
    fn sampled_points_have_zero_residual(seed in 0u64..500) {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(&mut rng);
        for s in m.sample_surface_detailed(&state, 20, 20, seed).unwrap() {
            let meas = PointMeasurement::with_std(s.global, Vector3::repeat(0.05));
            let r: DVector<f64> = m.pseudo_measurement(&state, &meas, &s.assignment).unwrap();
            prop_assert!(r.norm() < 1e-9);
        }
    }
}

#[test]
fn width_index_is_eighth() {
    assert_eq!(idx::WIDTH, 7);
}
