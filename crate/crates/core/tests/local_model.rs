use camset::geometry::{
    calibrate, exp_so3, ray_residual, rotation_angle, uncalibrate, CameraIntrinsics, CameraPose,
    HomogeneousPoint, Ray,
};
use camset::local_model::{
    bundle_adjust, bundle_jacobians, triangulate, CameraSetModel, LocalModelError, PixelObservation,
};
use camset::refine::{LmConfig, RefineError};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rvec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ) * sigma
}

fn ray_cost(rays: &[Ray], x: &Vector3<f64>) -> f64 {
    rays.iter()
        .map(|r| {
            let v = x - r.center();
            (v - r.direction() * r.direction().dot(&v)).norm_squared()
        })
        .sum()
}

fn noisy_rays(rng: &mut ChaCha8Rng, x: &Vector3<f64>, n: usize, sigma: f64) -> Vec<Ray> {
    (0..n)
        .map(|_| {
            let c = rvec(rng, 5.0);
            let d = (x - c).normalize() + gaussian(rng, sigma);
            Ray::new(d, c).unwrap()
        })
        .collect()
}

#[test]
fn noisy_triangulation_matches_brute_force_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let planted = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(10.0..20.0),
        );
        let rays = noisy_rays(&mut rng, &planted, 10, 1e-3);
        let t = triangulate(&rays, 1e-3).unwrap();
        // Depth 10-25 m with 1e-3 rad noise: errors of a few centimeters.
        assert!(
            (t.point - planted).norm() < 0.2,
            "{}",
            (t.point - planted).norm()
        );

        // Independent minimizer: gradient descent with backtracking on the
        // same quadratic cost, started from the planted point.
        let grad = |x: &Vector3<f64>| -> Vector3<f64> {
            rays.iter()
                .map(|r| {
                    let v = x - r.center();
                    (v - r.direction() * r.direction().dot(&v)) * 2.0
                })
                .sum()
        };
        let mut x = planted;
        for _ in 0..20_000 {
            let g = grad(&x);
            if g.norm() < 1e-13 {
                break;
            }
            let mut step = 1.0;
            while ray_cost(&rays, &(x - g * step))
                > ray_cost(&rays, &x) - 0.5 * step * g.norm_squared()
            {
                step *= 0.5;
            }
            x -= g * step;
        }
        assert!((t.point - x).norm() < 1e-6, "{}", (t.point - x).norm());
    }
}

#[test]
fn triangulation_is_a_local_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let planted = Vector3::new(0.5, -1.0, 12.0);
    let rays = noisy_rays(&mut rng, &planted, 10, 1e-3);
    let t = triangulate(&rays, 1e-3).unwrap();
    let best = ray_cost(&rays, &t.point);
    for _ in 0..100 {
        let nearby = t.point + rvec(&mut rng, 1e-3);
        assert!(ray_cost(&rays, &nearby) >= best);
    }
}

proptest! {
    #[test]
    fn triangulation_is_rigidly_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted = rvec(&mut rng, 3.0) + Vector3::new(0.0, 0.0, 15.0);
        let rays = noisy_rays(&mut rng, &planted, 6, 1e-3);
        let r = exp_so3(&rvec(&mut rng, 3.0));
        let shift = rvec(&mut rng, 10.0);
        let moved: Vec<Ray> = rays.iter().map(|ray| Ray::new(r * ray.direction(), r * ray.center() + shift).unwrap()).collect();
        let a = triangulate(&rays, 1e-3).unwrap().point;
        let b = triangulate(&moved, 1e-3).unwrap().point;
        prop_assert!((r * a + shift - b).norm() < 1e-9);
    }
}

/// Four cameras (three panoramas, one rectilinear) roughly along the x axis
/// facing +z, observing points in front of them.
fn ba_scene(seed: u64, num_points: usize) -> CameraSetModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pano = CameraIntrinsics::panoramic(2048, 1024).unwrap();
    let rect = CameraIntrinsics::rectilinear(500.0, 640, 480).unwrap();
    let mut cameras = vec![(rect, CameraPose::identity())];
    for i in 1..4 {
        let center = Vector3::new(1.5 * i as f64, 0.0, 0.0) + rvec(&mut rng, 0.3);
        let pose = CameraPose::from_center(exp_so3(&rvec(&mut rng, 0.1)), &center);
        cameras.push((pano, pose));
    }
    let points: Vec<Vector3<f64>> = (0..num_points)
        .map(|_| {
            Vector3::new(
                rng.random_range(-3.0..6.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(8.0..15.0),
            )
        })
        .collect();
    let mut observations = Vec::new();
    for (j, x) in points.iter().enumerate() {
        for (i, (k, pose)) in cameras.iter().enumerate() {
            let Ok(pixel) = uncalibrate(&pose.transform_point(x), k) else {
                continue;
            };
            if k.contains(&pixel) {
                observations.push(PixelObservation {
                    camera: i,
                    point: j,
                    pixel,
                    descriptor: None,
                });
            }
        }
    }
    CameraSetModel {
        cameras,
        points,
        observations,
        target_camera: 0,
    }
}

fn independent_cost(model: &CameraSetModel) -> (f64, f64) {
    let mut sq = 0.0;
    let mut norms = 0.0;
    for o in &model.observations {
        let (k, pose) = &model.cameras[o.camera];
        let r = ray_residual(
            &calibrate(&o.pixel, k),
            pose,
            &HomogeneousPoint::from_euclidean(&model.points[o.point]),
        )
        .unwrap();
        sq += r.norm_squared();
        norms += r.norm();
    }
    (sq, norms)
}

fn perturb(
    model: &mut CameraSetModel,
    rng: &mut ChaCha8Rng,
    angle: f64,
    offset: f64,
    point_offset: f64,
) {
    for (_, pose) in model.cameras.iter_mut().skip(1) {
        *pose = CameraPose::from_center(
            exp_so3(&rvec(rng, angle)) * pose.rotation(),
            &(pose.center() + rvec(rng, offset)),
        );
    }
    for p in &mut model.points {
        *p += rvec(rng, point_offset);
    }
}

#[test]
fn ground_truth_model_is_unchanged() {
    let model = ba_scene(3, 60);
    let out = bundle_adjust(&model, &LmConfig::default()).unwrap();
    for ((_, a), (_, b)) in out.model.cameras.iter().zip(&model.cameras) {
        assert!(rotation_angle(a.rotation(), b.rotation()) < 1e-9);
        assert!((a.center() - b.center()).norm() < 1e-9);
    }
    for (a, b) in out.model.points.iter().zip(&model.points) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn perturbed_model_recovers_up_to_gauge() {
    for seed in 0..5 {
        let truth = ba_scene(10 + seed, 80);
        let mut model = truth.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perturb(&mut model, &mut rng, 0.01, 0.05, 0.1);
        let out = bundle_adjust(&model, &LmConfig::default()).unwrap();
        assert!(out.cost < 1e-12, "seed {seed}: {}", out.cost);
        for w in out.cost_history.windows(2) {
            assert!(w[1] < w[0]);
        }

        // Gauge: camera 0 fixed, |C1 - C0| taken from the perturbed input.
        let c0 = truth.cameras[0].1.center();
        let lambda =
            (model.cameras[1].1.center() - c0).norm() / (truth.cameras[1].1.center() - c0).norm();
        let expect = |x: &Vector3<f64>| c0 + (x - c0) * lambda;
        assert_eq!(out.model.cameras[0], model.cameras[0]);
        for ((_, est), (_, gt)) in out.model.cameras.iter().zip(&truth.cameras) {
            assert!(rotation_angle(est.rotation(), gt.rotation()) < 1e-6);
            assert!((est.center() - expect(&gt.center())).norm() < 1e-6);
        }
        for (est, gt) in out.model.points.iter().zip(&truth.points) {
            assert!((est - expect(gt)).norm() < 1e-6);
        }
    }
}

#[test]
fn reported_cost_matches_independent_evaluation() {
    let mut model = ba_scene(4, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for o in &mut model.observations {
        o.pixel += Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    }
    let (sq0, _) = independent_cost(&model);
    let out = bundle_adjust(&model, &LmConfig::default()).unwrap();
    assert!((out.initial_cost - sq0).abs() <= 1e-12 * sq0);
    let (sq, norms) = independent_cost(&out.model);
    assert!((out.cost - sq).abs() <= 1e-12 * sq.max(1e-300));
    assert!((out.sum_of_norms - norms).abs() <= 1e-12 * norms.max(1e-300));
    assert!(out.cost <= out.initial_cost);
}

#[test]
fn bundle_jacobian_matches_central_differences() {
    for seed in 0..5 {
        let mut model = ba_scene(20 + seed, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        perturb(&mut model, &mut rng, 0.02, 0.1, 0.2);
        let cmp = bundle_jacobians(&model, 1e-6).unwrap();
        assert!(
            cmp.max_relative_error() < 1e-6,
            "{}",
            cmp.max_relative_error()
        );
    }
}

#[test]
fn model_validation_and_gauge_errors() {
    let cfg = LmConfig::default();
    let model = ba_scene(5, 20);

    let mut lonely = model.clone();
    lonely
        .observations
        .retain(|o| o.point != 0 || o.camera == 1);
    assert!(matches!(
        bundle_adjust(&lonely, &cfg),
        Err(LocalModelError::InvalidModel(_))
    ));

    let mut bad_target = model.clone();
    bad_target.target_camera = 9;
    assert!(matches!(
        bad_target.validate(),
        Err(LocalModelError::InvalidModel(_))
    ));

    let mut shared = model.clone();
    let r = *shared.cameras[1].1.rotation();
    shared.cameras[1].1 = CameraPose::from_center(r, &shared.cameras[0].1.center());
    assert!(matches!(
        bundle_adjust(&shared, &cfg),
        Err(LocalModelError::Refine(RefineError::GaugeUnderconstrained(
            _
        )))
    ));
}

#[test]
fn retriangulation_restores_points() {
    let truth = ba_scene(6, 40);
    let mut model = truth.clone();
    for p in &mut model.points {
        *p += Vector3::new(0.3, -0.2, 0.5);
    }
    model.retriangulate(1e-3).unwrap();
    for (a, b) in model.points.iter().zip(&truth.points) {
        assert!((a - b).norm() < 1e-8);
    }
}
