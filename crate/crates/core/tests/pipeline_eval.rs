use std::collections::BTreeMap;
use std::path::Path;

use omnigyro::error::Error;
use omnigyro::eval::{
    evaluate_estimates, evaluate_sequence, parse_ground_truth, EstimateRecord, GroundTruthRecord,
};
use omnigyro::fixtures::SmoothScene;
use omnigyro::horizon::{synth_heatmaps, HeatMapPair};
use omnigyro::pipeline::{
    estimate_frame, estimate_sequence, list_frames, PipelineConfig, Reference, Stage,
    SyntheticHeatmaps,
};
use omnigyro::{geodesic_angle, rotate_equirect, rpy_to_rotation, EquirectImage, EulerRPY, RotationSO3};

const WIDTH: usize = 512;

/// What a camera with camera-to-world rotation `r` sees.
fn view(scene: &SmoothScene, r: &RotationSO3) -> EquirectImage {
    EquirectImage::from_fn(WIDTH, WIDTH / 2, |d| scene.brightness(&r.apply(d))).unwrap()
}

fn maps(r: &RotationSO3, seed: u64) -> HeatMapPair {
    synth_heatmaps(&r.transpose(), WIDTH, WIDTH / 2, 2.0, 0.1, seed).unwrap()
}

fn trajectory(n: usize) -> Vec<RotationSO3> {
    (0..n)
        .map(|t| {
            let t = t as f64;
            rpy_to_rotation(EulerRPY::from_degrees(
                8.0 * (0.4 * t).sin(),
                6.0 * (0.3 * t + 1.0).cos(),
                -60.0 + 9.0 * t,
            ))
        })
        .collect()
}

fn write_sequence(dir: &Path, scene: &SmoothScene, rotations: &[RotationSO3]) {
    for (i, r) in rotations.iter().enumerate() {
        view(scene, r).save(dir.join(format!("{i:04}.png"))).unwrap();
    }
}

fn gt_records(rotations: &[RotationSO3]) -> Vec<GroundTruthRecord> {
    rotations
        .iter()
        .enumerate()
        .map(|(i, r)| GroundTruthRecord {
            frame_id: i as u64,
            rotation: *r,
            timestamp: None,
        })
        .collect()
}

#[test]
fn self_alignment_is_identity() {
    let scene = SmoothScene::random(1);
    let img = view(&scene, &RotationSO3::identity());
    let hm = maps(&RotationSO3::identity(), 1);
    let cfg = PipelineConfig::default();
    let reference = Reference::new(0, img.clone(), Some(&hm), &cfg).unwrap();
    let est = estimate_frame(0, &img, &hm, &reference, None, &cfg).unwrap();
    assert!(geodesic_angle(&est.rotation, &RotationSO3::identity()).to_degrees() < 0.1);
    assert_eq!(est.stage_trace.len(), 3);
}

#[test]
fn single_frame_end_to_end() {
    let scene = SmoothScene::random(2);
    let cfg = PipelineConfig::default();
    let ref_r = rpy_to_rotation(EulerRPY::from_degrees(3.0, -4.0, 10.0));
    let reference = Reference::new(0, view(&scene, &ref_r), Some(&maps(&ref_r, 0)), &cfg).unwrap();
    for (k, rpy) in [(15.0, -10.0, 100.0), (-20.0, 5.0, -150.0), (0.0, 25.0, 45.0)]
        .into_iter()
        .enumerate()
    {
        let r = rpy_to_rotation(EulerRPY::from_degrees(rpy.0, rpy.1, rpy.2));
        let frame = view(&scene, &r);
        let est = estimate_frame(1, &frame, &maps(&r, k as u64), &reference, None, &cfg).unwrap();
        let truth = ref_r.transpose() * r;
        let err = geodesic_angle(&est.rotation, &truth).to_degrees();
        assert!(err < 0.5, "case {k}: error {err} deg");
        // the estimate is the rotation that maps this frame onto the reference
        let same = rotate_equirect(&view(&scene, &ref_r), &truth.transpose());
        assert!(same.mean_abs_diff(&frame).unwrap() < 0.02);
    }
}

#[test]
fn zero_heatmaps_without_warm_start_fail() {
    let scene = SmoothScene::random(3);
    let img = view(&scene, &RotationSO3::identity());
    let cfg = PipelineConfig::default();
    let reference = Reference::new(0, img.clone(), None, &cfg).unwrap();
    let blank = EquirectImage::constant(WIDTH, WIDTH / 2, 0.0).unwrap();
    let hm = HeatMapPair::new(blank.clone(), blank).unwrap();
    let err = estimate_frame(0, &img, &hm, &reference, None, &cfg).unwrap_err();
    assert!(matches!(err, Error::EmptyHeatmap), "{err}");
    let warm = estimate_frame(0, &img, &maps(&RotationSO3::identity(), 0), &reference, None, &cfg).unwrap();
    let est = estimate_frame(1, &img, &hm, &reference, Some(&warm), &cfg).unwrap();
    assert!(!est.horizon_ok);
    assert!(geodesic_angle(&est.rotation, &RotationSO3::identity()).to_degrees() < 0.1);
}

#[test]
fn twenty_frame_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SmoothScene::random(4);
    let rotations = trajectory(20);
    write_sequence(dir.path(), &scene, &rotations);
    let frames = list_frames(dir.path()).unwrap();
    assert_eq!(frames.len(), 20);
    let source = SyntheticHeatmaps {
        rotations: rotations.iter().enumerate().map(|(i, r)| (i as u64, *r)).collect(),
        sigma_deg: 2.0,
        noise: 0.1,
        seed: 5,
    };
    let cfg = PipelineConfig::default();
    let gt = gt_records(&rotations);
    let ref_id = 7;
    let outcome = evaluate_sequence(&frames, &source, &gt, ref_id, 5.0, &cfg).unwrap();
    let report = outcome.report.unwrap();
    println!("{report}");
    assert!(report.mean_rot_err_deg < 0.5);
    assert_eq!(report.success_rate, 1.0);
    for est in &outcome.estimates {
        assert!(est.converged, "frame {}", est.frame_id);
        let mpp = est.stage(Stage::Mpp).unwrap().photometric_cost.unwrap();
        let pvg = est.stage(Stage::Pvg).unwrap().photometric_cost.unwrap();
        assert!(pvg <= mpp);
        let rpy_rot = rpy_to_rotation(est.rpy);
        assert!(geodesic_angle(&rpy_rot, &est.rotation) < 1e-9);
    }
}

#[test]
fn qualitative_mode_stabilizes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SmoothScene::random(6);
    let rotations = trajectory(4);
    write_sequence(dir.path(), &scene, &rotations);
    let frames = list_frames(dir.path()).unwrap();
    let source = SyntheticHeatmaps {
        rotations: rotations.iter().enumerate().map(|(i, r)| (i as u64, *r)).collect(),
        sigma_deg: 2.0,
        noise: 0.0,
        seed: 1,
    };
    let outcome = evaluate_sequence(&frames, &source, &[], 0, 10.0, &PipelineConfig::default()).unwrap();
    assert!(outcome.report.is_none());
    let reference = EquirectImage::load(&frames[0].path).unwrap();
    for (id, img) in &outcome.stabilized {
        let diff = img.mean_abs_diff(&reference).unwrap();
        assert!(diff < 0.02, "frame {id}: {diff}");
    }
}

#[test]
fn missing_reference_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SmoothScene::random(7);
    write_sequence(dir.path(), &scene, &trajectory(2));
    let frames = list_frames(dir.path()).unwrap();
    let source = SyntheticHeatmaps {
        rotations: BTreeMap::new(),
        sigma_deg: 2.0,
        noise: 0.0,
        seed: 1,
    };
    let err = estimate_sequence(&frames, &source, 99, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingReference(99)));
}

fn exact_estimates(gt: &[GroundTruthRecord], ref_id: u64) -> Vec<EstimateRecord> {
    let r_ref = gt.iter().find(|g| g.frame_id == ref_id).unwrap().rotation;
    gt.iter()
        .map(|g| {
            let rel = r_ref.transpose() * g.rotation;
            let level = g.rotation.to_rpy();
            let horizon = EulerRPY::new(level.roll, level.pitch, 0.0);
            EstimateRecord {
                frame_id: g.frame_id,
                rotation: rel,
                converged: true,
                horizon_ok: true,
                stages: [(horizon, 0.0), (horizon, 0.0), (rel.to_rpy(), 0.0)],
            }
        })
        .collect()
}

#[test]
fn exact_estimates_score_zero() {
    let gt = gt_records(&trajectory(30));
    let est = exact_estimates(&gt, 3);
    let report = evaluate_estimates(&est, &gt, 3, 10.0).unwrap();
    assert_eq!(report.success_rate, 1.0);
    assert!(report.mean_rot_err_deg < 1e-9);
    assert!(report.mean_normal_err_deg < 1e-9);
}

#[test]
fn injected_failures_set_the_success_rate() {
    let gt = gt_records(&trajectory(100));
    let mut est = exact_estimates(&gt, 0);
    for e in est.iter_mut().skip(1).step_by(20) {
        e.rotation = RotationSO3::rx(std::f64::consts::FRAC_PI_2) * e.rotation;
    }
    let report = evaluate_estimates(&est, &gt, 0, 10.0).unwrap();
    assert_eq!(report.success_rate, 0.95);
    let below = report.frames.iter().filter(|f| f.rot_err_deg < 10.0).count();
    assert_eq!(report.success_rate, below as f64 / report.frames.len() as f64);
}

#[test]
fn errors_do_not_depend_on_the_world_frame() {
    let gt = gt_records(&trajectory(12));
    let mut est = exact_estimates(&gt, 2);
    for (k, e) in est.iter_mut().enumerate() {
        e.rotation = RotationSO3::exp(&nalgebra::Vector3::new(0.01 * k as f64, -0.02, 0.005)) * e.rotation;
        e.stages[0].0.roll += 0.01 * k as f64;
    }
    let base = evaluate_estimates(&est, &gt, 2, 10.0).unwrap();
    // any world rotation leaves relative-rotation errors unchanged; gravity
    // normals are unchanged only by rotations about the vertical
    let q_any = rpy_to_rotation(EulerRPY::from_degrees(20.0, -30.0, 70.0));
    let q_yaw = RotationSO3::rz(1.1);
    for (q, normals_too) in [(q_any, false), (q_yaw, true)] {
        let moved: Vec<GroundTruthRecord> = gt
            .iter()
            .map(|g| GroundTruthRecord {
                rotation: q * g.rotation,
                ..*g
            })
            .collect();
        let report = evaluate_estimates(&est, &moved, 2, 10.0).unwrap();
        for (a, b) in base.frames.iter().zip(&report.frames) {
            assert!((a.rot_err_deg - b.rot_err_deg).abs() < 1e-9);
            if normals_too {
                assert!((a.normal_err_deg.unwrap() - b.normal_err_deg.unwrap()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn quaternion_and_rpy_rows_agree() {
    let rpy = EulerRPY::from_degrees(12.0, -33.0, 140.0);
    let r = rpy_to_rotation(rpy);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r.matrix()));
    let [rd, pd, yd] = rpy.to_degrees();
    let text = format!(
        "1,{},{},{},{}\n",
        q.w, q.i, q.j, q.k
    );
    let a = parse_ground_truth(&text, Path::new("q.csv")).unwrap();
    let b = parse_ground_truth(&format!("1,{rd},{pd},{yd}\n"), Path::new("e.csv")).unwrap();
    assert!(geodesic_angle(&a[0].rotation, &b[0].rotation) < 1e-6);
    assert!(geodesic_angle(&a[0].rotation, &r) < 1e-6);
}
