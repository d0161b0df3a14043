use nalgebra::Vector3;
use omnigyro::error::Error;
use omnigyro::horizon::{
    estimate_attitude, estimate_vertical, heatmap_to_sphere, ransac_horizon_plane, synth_heatmaps,
    HorizonConfig, RansacConfig, WeightedSpherePoints,
};
use omnigyro::{rpy_to_rotation, Direction, EulerRPY, RotationSO3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const W: usize = 256;
const H: usize = 128;

fn random_unit(rng: &mut impl Rng) -> Direction {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        if let Some(d) = Direction::new(Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))) {
            return d;
        }
    }
}

/// Tangent-plane Gaussian jitter of `sigma` radians around `d`.
fn jitter(d: &Direction, sigma: f64, rng: &mut impl Rng) -> Direction {
    let n = Normal::new(0.0, sigma).unwrap();
    let w = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
    let w = w - d.as_vector() * w.dot(d.as_vector());
    RotationSO3::exp(&d.as_vector().cross(&w)).apply(d)
}

fn perpendicular_basis(n: &Direction) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.z().abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let a = n.as_vector().cross(&helper).normalize();
    let b = n.as_vector().cross(&a);
    (a, b)
}

fn circle_points(n: &Direction, count: usize, noise: f64, rng: &mut impl Rng) -> Vec<(Direction, f64)> {
    let (a, b) = perpendicular_basis(n);
    (0..count)
        .map(|_| {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let d = Direction::new(a * t.cos() + b * t.sin()).unwrap();
            (jitter(&d, noise, rng), 1.0)
        })
        .collect()
}

#[test]
fn band_pixels_lie_near_the_true_circle() {
    let r = rpy_to_rotation(EulerRPY::from_degrees(12.0, -20.0, 40.0));
    let hm = synth_heatmaps(&r, W, H, 1.0, 0.0, 1).unwrap();
    let pts = heatmap_to_sphere(&hm.horizon, 0.3).unwrap();
    let normal = r.apply(&Direction::UP);
    let worst = pts
        .points
        .iter()
        .map(|(d, _)| d.dot(&normal).abs().asin().to_degrees())
        .fold(0.0, f64::max);
    assert!(!pts.is_empty());
    assert!(worst < 2.0, "worst {worst} deg");
}

#[test]
fn noisy_vertical_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = RotationSO3::rx(10f64.to_radians()).apply(&Direction::UP);
    let points = (0..200)
        .map(|i| {
            let d = jitter(&truth, 5f64.to_radians(), &mut rng);
            // vertical heat-maps respond at both poles
            (if i % 3 == 0 { d.antipode() } else { d }, 1.0)
        })
        .collect();
    let est = estimate_vertical(&WeightedSpherePoints { points }).unwrap();
    let err = est.angle_to(&truth).to_degrees();
    assert!(err < 1.5, "error {err} deg");
}

#[test]
fn ransac_with_uniform_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let truth = jitter(&Direction::UP, 0.4, &mut rng);
        let mut points = circle_points(&truth, 700, 0.3f64.to_radians(), &mut rng);
        points.extend((0..300).map(|_| (random_unit(&mut rng), 1.0)));
        let v_est = jitter(&truth, 5f64.to_radians(), &mut rng);
        let plane = ransac_horizon_plane(
            &WeightedSpherePoints { points },
            &v_est,
            &RansacConfig::default(),
            &mut rng,
        )
        .unwrap();
        let err = plane.normal.angle_to(&truth).to_degrees();
        assert!(err < 1.0, "error {err} deg");
        assert!(plane.inlier_ratio >= 0.6, "ratio {}", plane.inlier_ratio);
    }
}

#[test]
fn gate_rejects_planes_forty_degrees_off() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rejected = 0;
    for _ in 0..20 {
        let v_est = jitter(&Direction::UP, 0.5, &mut rng);
        let (a, _) = perpendicular_basis(&v_est);
        let tilt = RotationSO3::exp(&(a * 40f64.to_radians()));
        let off = tilt.apply(&v_est);
        let points = circle_points(&off, 1000, 0.3f64.to_radians(), &mut rng);
        let res = ransac_horizon_plane(
            &WeightedSpherePoints { points },
            &v_est,
            &RansacConfig::default(),
            &mut rng,
        );
        if matches!(res, Err(Error::NoConsensus(_))) {
            rejected += 1;
        }
    }
    assert_eq!(rejected, 20);
}

#[test]
fn returned_normals_respect_the_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = RansacConfig::default();
    let mut returned = 0;
    for k in 0..40 {
        let truth = jitter(&Direction::UP, 0.5, &mut rng);
        let mut points = circle_points(&truth, 400, 1f64.to_radians(), &mut rng);
        points.extend((0..200).map(|_| (random_unit(&mut rng), 1.0)));
        // v_est spread from 0 to 45 degrees away from the plane normal
        let (a, _) = perpendicular_basis(&truth);
        let v_est = RotationSO3::exp(&(a * (k as f64 * 45.0 / 40.0).to_radians())).apply(&truth);
        if let Ok(plane) = ransac_horizon_plane(&WeightedSpherePoints { points }, &v_est, &cfg, &mut rng) {
            returned += 1;
            assert!(plane.normal.angle_to(&v_est) <= cfg.gate_deg.to_radians() + 1e-12);
        }
    }
    assert!(returned > 0);
}

#[test]
fn full_chain_recovers_roll_and_pitch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = HorizonConfig::default();
    let (mut roll_err, mut pitch_err) = (0.0, 0.0);
    let trials = 50;
    for t in 0..trials {
        let rpy = EulerRPY::from_degrees(
            rng.random_range(-60.0..=60.0),
            rng.random_range(-60.0..=60.0),
            rng.random_range(-180.0..180.0),
        );
        let camera_to_world = rpy_to_rotation(rpy);
        let hm = synth_heatmaps(&camera_to_world.transpose(), W, H, 2.0, 0.1, t).unwrap();
        let att = estimate_attitude(&hm, &cfg, &mut rng).unwrap();
        roll_err += (att.roll - rpy.roll).abs().to_degrees();
        pitch_err += (att.pitch - rpy.pitch).abs().to_degrees();
    }
    let (roll_err, pitch_err) = (roll_err / trials as f64, pitch_err / trials as f64);
    println!("mean roll error {roll_err:.3} deg, mean pitch error {pitch_err:.3} deg");
    assert!(roll_err < 1.0 && pitch_err < 1.0);
}

#[test]
fn chain_is_rotation_equivariant() {
    let cfg = HorizonConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let r = rpy_to_rotation(EulerRPY::from_degrees(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-180.0..180.0),
        ));
        let q = rpy_to_rotation(EulerRPY::from_degrees(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-180.0..180.0),
        ));
        let a = synth_heatmaps(&r, W, H, 2.0, 0.0, 1).unwrap();
        let b = synth_heatmaps(&(q * r), W, H, 2.0, 0.0, 1).unwrap();
        let na = estimate_attitude(&a, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let nb = estimate_attitude(&b, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let moved = q.apply(&na.plane.normal);
        let gap = moved.angle_to(&nb.plane.normal).to_degrees();
        assert!(gap < 2.0, "gap {gap} deg");
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    let r = rpy_to_rotation(EulerRPY::from_degrees(15.0, 5.0, 0.0));
    let hm = synth_heatmaps(&r, W, H, 2.0, 0.1, 7).unwrap();
    let cfg = HorizonConfig::default();
    let a = estimate_attitude(&hm, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = estimate_attitude(&hm, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
}
