use std::time::Instant;

use nalgebra::Vector3;
use omnigyro::fixtures::SmoothScene;
use omnigyro::pvg::{PvgAligner, RefineConfig};
use omnigyro::{geodesic_angle, EquirectImage, RotationSO3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTH: usize = 512;

fn rot(axis: &Vector3<f64>, angle: f64) -> RotationSO3 {
    RotationSO3::exp(&(axis.normalize() * angle))
}

fn axis(k: usize) -> Vector3<f64> {
    let mut a = Vector3::zeros();
    a[k] = 1.0;
    a
}

/// Frame whose estimate is `c`: `cur(d) = scene(c d)`.
fn render_rotated(scene: &SmoothScene, c: &RotationSO3) -> EquirectImage {
    render_rotated_at(scene, c, WIDTH)
}

fn render_rotated_at(scene: &SmoothScene, c: &RotationSO3, width: usize) -> EquirectImage {
    EquirectImage::from_fn(width, width / 2, |d| scene.brightness(&c.apply(d))).unwrap()
}

fn single_axis(rng: &mut impl Rng, max_deg: f64) -> RotationSO3 {
    let k = rng.random_range(0..3);
    let angle = rng.random_range(-max_deg..=max_deg).to_radians();
    rot(&axis(k), angle)
}

fn offset_of(rng: &mut impl Rng, deg: f64) -> RotationSO3 {
    let k = rng.random_range(0..3);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    rot(&axis(k), sign * deg.to_radians())
}

#[test]
fn recovers_small_rotations_to_a_tenth_of_a_degree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    for seed in 0..20 {
        let scene = SmoothScene::random(seed);
        let reference = scene.render(WIDTH);
        let truth = single_axis(&mut rng, 12.0);
        let cur = render_rotated(&scene, &truth);
        let r0 = offset_of(&mut rng, 10.0) * truth;
        let start = Instant::now();
        let aligner = PvgAligner::new(&reference, RefineConfig::default()).unwrap();
        let res = aligner.refine(&cur, &r0).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let err = geodesic_angle(&res.rotation, &truth).to_degrees();
        assert!(res.converged, "seed {seed} did not converge");
        assert!(res.final_cost <= res.initial_cost);
        worst = worst.max(err);
    }
    println!("worst error {worst:.5} deg, slowest frame {slowest:.3} s");
    assert!(worst < 0.1, "worst error {worst} deg");
    assert!(slowest < 5.0);
}

#[test]
fn converges_from_twelve_and_a_half_degrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ok = 0;
    for seed in 100..120 {
        let scene = SmoothScene::random(seed);
        let aligner = PvgAligner::new(&scene.render(WIDTH), RefineConfig::default()).unwrap();
        let truth = single_axis(&mut rng, 5.0);
        let cur = render_rotated(&scene, &truth);
        let r0 = offset_of(&mut rng, 12.5) * truth;
        let res = aligner.refine(&cur, &r0).unwrap();
        let err = geodesic_angle(&res.rotation, &truth).to_degrees();
        if res.converged && err < 0.1 {
            ok += 1;
        } else {
            println!("seed {seed}: error {err:.4} deg, converged {}", res.converged);
        }
    }
    assert_eq!(ok, 20);
}

#[test]
fn jacobian_matches_finite_differences() {
    // Oracle: central differences of the continuous residual
    // ref(x) - scene(truth R^T x) under left perturbations exp(h e_j) R.
    // the gradient comes from one-pixel differences, so its error
    // shrinks with resolution
    let width = 2 * WIDTH;
    let scene = SmoothScene::random(7);
    let reference = scene.render(width);
    let truth = rot(&Vector3::new(0.3, -0.5, 0.8), 0.1);
    let cur = render_rotated_at(&scene, &truth, width);
    let cfg = RefineConfig {
        level: 3,
        ..RefineConfig::default()
    };
    let aligner = PvgAligner::new(&reference, cfg).unwrap();
    let frame = aligner.prepare(&cur).unwrap();
    let r = rot(&Vector3::new(-0.2, 0.9, 0.1), 0.05);
    let lin = aligner.linearize(&frame, &r);
    let h = 1e-6;
    let residual = |q: &RotationSO3, x: &omnigyro::Direction| {
        -scene.brightness(&(truth * q.transpose()).apply(x))
    };
    let (mut diff_sq, mut norm_sq) = (0.0, 0.0);
    let (mut bdiff_sq, mut bnorm_sq) = (0.0, 0.0);
    for j in 0..3 {
        let plus = RotationSO3::exp(&(axis(j) * h)) * r;
        let minus = RotationSO3::exp(&(axis(j) * -h)) * r;
        let lp = aligner.linearize(&frame, &plus);
        let lm = aligner.linearize(&frame, &minus);
        for (k, x) in aligner.grid().vertices().iter().enumerate() {
            if !lin.valid[k] {
                continue;
            }
            let fd = (residual(&plus, x) - residual(&minus, x)) / (2.0 * h);
            diff_sq += (lin.jacobian[k][j] - fd).powi(2);
            norm_sq += fd * fd;
            let bfd = (lp.residuals[k] - lm.residuals[k]) / (2.0 * h);
            bdiff_sq += (lin.jacobian[k][j] - bfd).powi(2);
            bnorm_sq += bfd * bfd;
        }
    }
    let rel = (diff_sq / norm_sq).sqrt();
    let brel = (bdiff_sq / bnorm_sq).sqrt();
    println!("relative Jacobian error {rel:.2e} (vs sampled residual {brel:.2e})");
    assert!(rel < 1e-3, "relative error {rel}");
}

#[test]
fn left_composition_is_consistent() {
    // Estimating from a frame rotated once more by Q on the left yields
    // an estimate composed with Q.
    let scene = SmoothScene::random(21);
    let aligner = PvgAligner::new(&scene.render(WIDTH), RefineConfig::default()).unwrap();
    let a = rot(&Vector3::new(1.0, 2.0, -1.0), 4f64.to_radians());
    let q = rot(&Vector3::new(0.0, 1.0, 1.0), 3f64.to_radians());
    let qa = q * a;
    let est_a = aligner.refine(&render_rotated(&scene, &a), &RotationSO3::identity()).unwrap();
    let est_qa = aligner.refine(&render_rotated(&scene, &qa), &RotationSO3::identity()).unwrap();
    let composed = q * est_a.rotation;
    let gap = geodesic_angle(&composed, &est_qa.rotation).to_degrees();
    assert!(gap < 0.05, "gap {gap} deg");
}

#[test]
fn rotating_both_images_conjugates_the_estimate() {
    // ref' = rotate(ref, Q), cur' = rotate(cur, Q) turns the cost into
    // sum (ref(x) - cur(Q^T R^T Q x))^2 over x = Q^T x_k, minimized at
    // Q R Q^T.
    use omnigyro::rotate_equirect;

    let scene = SmoothScene::random(22);
    let reference = scene.render(WIDTH);
    let truth = rot(&Vector3::new(0.2, -1.0, 0.4), 6f64.to_radians());
    let cur = render_rotated(&scene, &truth);
    let r0 = rot(&Vector3::new(1.0, 0.0, 0.3), 8f64.to_radians()) * truth;
    let cfg = RefineConfig::default();
    let plain = PvgAligner::new(&reference, cfg).unwrap().refine(&cur, &r0).unwrap();
    let q = rot(&Vector3::new(0.5, 0.5, -1.0), 25f64.to_radians());
    let aligner = PvgAligner::new(&rotate_equirect(&reference, &q), cfg).unwrap();
    let moved = aligner
        .refine(&rotate_equirect(&cur, &q), &(q * r0 * q.transpose()))
        .unwrap();
    let expect = q * plain.rotation * q.transpose();
    let gap = geodesic_angle(&expect, &moved.rotation).to_degrees();
    println!("conjugation gap {gap:.4} deg");
    assert!(gap < 0.05, "gap {gap} deg");
}

#[test]
fn refine_iteration_is_cheaper_than_an_mpp_evaluation() {
    use omnigyro::mpp::{build_mpp, yaw_cost, DEFAULT_LAMBDA};

    let scene = SmoothScene::random(31);
    let reference = scene.render(WIDTH);
    let truth = rot(&Vector3::new(1.0, 1.0, 1.0), 0.05);
    let cur = render_rotated(&scene, &truth);

    let aligner = PvgAligner::new(&reference, RefineConfig::default()).unwrap();
    let frame = aligner.prepare(&cur).unwrap();
    let start = Instant::now();
    let mut iterations = 0;
    for k in 0..3 {
        let r0 = rot(&axis(k), 10f64.to_radians()) * truth;
        iterations += aligner.refine_prepared(&frame, &r0).iterations;
    }
    let per_iter = start.elapsed().as_secs_f64() / iterations as f64;

    let g3 = omnigyro::build_icosphere(3).unwrap();
    let a = build_mpp(&reference, &g3, DEFAULT_LAMBDA).unwrap().with_full_kernel();
    let b = build_mpp(&cur, &g3, DEFAULT_LAMBDA).unwrap().with_full_kernel();
    let evals = 10;
    let start = Instant::now();
    for i in 0..evals {
        std::hint::black_box(yaw_cost(&a, &b, 0.0, 0.0, 0.01 * i as f64).unwrap());
    }
    let per_eval = start.elapsed().as_secs_f64() / evals as f64;
    let ratio = per_eval / per_iter;
    println!(
        "refine iteration {:.3} ms, MPP evaluation {:.3} ms, ratio {ratio:.1}",
        per_iter * 1e3,
        per_eval * 1e3
    );
    assert!(ratio >= 10.0, "ratio {ratio}");
}
