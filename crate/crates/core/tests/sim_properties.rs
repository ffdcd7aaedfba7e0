use nalgebra::Vector3;
use splinefuse::simkit::{make_left_turn_trajectory, LeftTurn, Scenario, ScenarioConfig, SensorConfig};

fn scenario(sensors: Vec<SensorConfig<f64>>) -> Scenario<f64> {
    Scenario::new(ScenarioConfig {
        sensors,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

#[test]
fn standing_vehicle_keeps_its_heading() {
    let traj = make_left_turn_trajectory(0.0, 10.0, 5.0, 0.1);
    assert_eq!(traj.len(), 51);
    for p in &traj {
        assert_eq!(p.position, Vector3::zeros());
        assert_eq!(p.yaw, 0.0);
        assert_eq!(p.turn_rate, 0.0);
    }
}

#[test]
fn arc_headings_advance_by_the_turn_rate() {
    let (speed, radius, dt): (f64, f64, f64) = (5.0, 12.0, 0.1);
    let traj = make_left_turn_trajectory(speed, radius, 10.0, dt);
    let mut on_arc = 0;
    for w in traj.windows(2) {
        if w[0].turn_rate > 0.0 && w[1].turn_rate > 0.0 {
            assert!((w[1].yaw - w[0].yaw - dt * speed / radius).abs() < 1e-12);
            on_arc += 1;
        }
    }
    assert!(on_arc > 10);
    let last = traj.last().unwrap();
    assert!((last.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    assert_eq!(last.turn_rate, 0.0);
}

#[test]
fn path_length_matches_speed_times_duration() {
    for (speed, radius, duration) in [(5.0f64, 12.0f64, 10.0f64), (8.0, 40.0, 6.0), (1.0, 2.0, 3.0)] {
        assert!((LeftTurn::new(speed, radius, duration).length() - speed * duration).abs() < 1e-9);
        let traj = make_left_turn_trajectory(speed, radius, duration, 1e-3);
        let polyline: f64 = traj.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum();
        assert!((polyline - speed * duration).abs() < 1e-6, "{polyline}");
    }
}

#[test]
fn sensor_on_the_left_never_sees_the_right_cap() {
    // At t = 0 the vehicle heads along +x, so body +y is global +y.
    let sc = scenario(vec![SensorConfig {
        position: [0.0, 15.0, 7.0],
        points_budget: 2000,
        noise_std: 0.0,
        ..SensorConfig::default()
    }]);
    let truth = sc.truth_at(0.0).unwrap();
    let half = truth.width() / 2.0;
    let pts = sc.render_sensor(&sc.config.sensors[0], 0.0).unwrap();
    assert!(pts.len() > 500);
    let mut left_cap = 0;
    for p in &pts {
        let b = truth.to_body(&p.source);
        assert!((b.y + half).abs() > 1e-9, "right cap point {b:?}");
        if (b.y - half).abs() < 1e-9 {
            left_cap += 1;
        }
    }
    assert!(left_cap > 50);
}

#[test]
fn noise_free_points_lie_on_the_surface() {
    let mut cfg = ScenarioConfig::<f64>::default();
    for s in &mut cfg.sensors {
        s.noise_std = 0.0;
    }
    let sc = Scenario::new(cfg).unwrap();
    for k in [0, 37, 80] {
        let frame = sc.frame(k).unwrap();
        let truth = &frame.ground_truth;
        let ctx = sc.model.context(truth).unwrap();
        for scan in &frame.scans {
            assert!(!scan.points.is_empty());
            for m in &scan.points {
                let a = ctx.assign(truth.width() / 2.0, &truth.to_body(&m.position));
                let r = sc.model.pseudo_measurement(truth, m, &a).unwrap();
                assert!(r.norm() < 1e-9, "frame {k}: residual {}", r.norm());
            }
        }
    }
}

#[test]
fn empirical_noise_matches_the_configured_std() {
    let std = 0.1;
    let sc = scenario(vec![SensorConfig {
        position: [0.0, -15.0, 7.0],
        points_budget: 40_000,
        noise_std: std,
        ..SensorConfig::default()
    }]);
    let mut offsets = Vec::new();
    let mut k = 0;
    while offsets.len() < 100_000 {
        for p in sc.render_sensor(&sc.config.sensors[0], sc.frame_time(k)).unwrap() {
            let d = p.measured - p.source;
            offsets.extend([d.x, d.y, d.z]);
        }
        k += 1;
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    let var = offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var.sqrt() / std - 1.0).abs() < 0.02, "std {}", var.sqrt());
    assert!(mean.abs() < 0.01);
}

#[test]
fn rendering_is_deterministic() {
    let sc = scenario(ScenarioConfig::<f64>::default().sensors);
    let again = scenario(ScenarioConfig::<f64>::default().sensors);
    for k in [0, 10, 99] {
        assert_eq!(sc.frame(k).unwrap(), again.frame(k).unwrap());
    }
    assert_eq!(sc.render_frame(sc.frame_time(10)).unwrap(), sc.frame(10).unwrap());
    assert_ne!(sc.frame(10).unwrap().scans[0], sc.frame(11).unwrap().scans[0]);
}

#[test]
fn returned_points_respect_range_and_field_of_view() {
    let sensor = SensorConfig {
        position: [10.0, -12.0, 7.0],
        horizontal_fov: 0.6,
        yaw: 1.2,
        vertical_fov: [-0.8, 0.1],
        max_range: 16.0,
        points_budget: 500,
        ..SensorConfig::default()
    };
    let sc = scenario(vec![sensor.clone()]);
    let mut total = 0;
    for k in 0..sc.frame_count() {
        for p in sc.render_sensor(&sensor, sc.frame_time(k)).unwrap() {
            assert!(sensor.sees(&p.source));
            total += 1;
        }
    }
    assert!(total > 0);
}

#[test]
fn range_thinning_keeps_a_prefix() {
    let full = SensorConfig {
        position: [-20.0, -20.0, 7.0],
        points_budget: 400,
        ..SensorConfig::default()
    };
    let thinned = SensorConfig {
        falloff_range: Some(15.0),
        ..full.clone()
    };
    let sc = scenario(vec![full.clone()]);
    let a = sc.render_sensor(&full, 0.0).unwrap();
    let b = sc.render_sensor(&thinned, 0.0).unwrap();
    assert!(b.len() < a.len() / 2 && !b.is_empty());
    assert_eq!(&a[..b.len()], &b[..]);
}

#[test]
fn out_of_range_time_is_an_error() {
    let sc = scenario(ScenarioConfig::<f64>::default().sensors);
    assert!(sc.render_frame(-0.1).is_err());
    assert!(sc.render_frame(sc.duration() + 0.5).is_err());
}

#[test]
fn frame_csv_has_one_row_per_point() {
    let sc = scenario(ScenarioConfig::<f64>::default().sensors);
    let frame = sc.frame(5).unwrap();
    let mut buf = Vec::new();
    splinefuse::simkit::write_frame_csv(&frame, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let n: usize = frame.scans.iter().map(|s| s.points.len()).sum();
    assert_eq!(text.lines().count(), n + 1);
    assert_eq!(text.lines().next().unwrap(), "x,y,z,sensor_id");
}
