//! Synthetic scenes and query camera sets with known ground truth.
//!
//! The scene is a box of points in front of a street-like line of
//! panoramas; each point owns a base descriptor and the scene stores noisy
//! copies of it, one per nearby panorama. A query set is a short rig of
//! rectilinear cameras reconstructed in its own frame: the target camera's
//! frame, scaled by a random factor.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PipelineError, QuerySet};
use crate::geometry::{
    calibrate, exp_so3, uncalibrate, CameraIntrinsics, CameraPose, Ray, Sim3Transform,
};
use crate::local_model::{
    triangulate, CameraSetModel, PixelObservation, DEFAULT_MIN_TRIANGULATION_ANGLE,
};
use crate::matcher::{Descriptor, ScenePointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Size of the scene box along x, y and z, meters.
    pub scene_extent: [f64; 3],
    /// Distance from the camera line to the near face of the box.
    pub scene_near: f64,
    pub scene_points: usize,
    pub scene_cameras: usize,
    /// Each scene point gets 1 to this many descriptors.
    pub descriptors_per_point: usize,
    pub descriptor_dim: usize,
    /// Per-component Gaussian noise added to base descriptors before
    /// normalization, for scene and query copies alike.
    pub descriptor_noise: f64,
    pub query_cameras: usize,
    /// Spacing between consecutive query cameras, meters.
    pub query_baseline: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
    /// Angular noise on observed rays, radians.
    pub ray_noise: f64,
    /// Rotation error applied to each non-target local camera pose, degrees.
    pub pose_rotation_deg: f64,
    /// Center error applied to each non-target local camera, as a fraction
    /// of its distance to the target camera.
    pub pose_offset_fraction: f64,
    /// Fraction of local points whose descriptors come from a wrong scene point.
    pub outlier_fraction: f64,
    /// Replace the target camera's descriptors with random ones.
    pub corrupt_target: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_extent: [40.0, 10.0, 20.0],
            scene_near: 8.0,
            scene_points: 800,
            scene_cameras: 8,
            descriptors_per_point: 2,
            descriptor_dim: crate::matcher::DEFAULT_DESCRIPTOR_DIM,
            descriptor_noise: 0.02,
            query_cameras: 4,
            query_baseline: 1.5,
            image_width: 640,
            image_height: 480,
            focal: 500.0,
            ray_noise: 0.0,
            pose_rotation_deg: 0.0,
            pose_offset_fraction: 0.0,
            outlier_fraction: 0.0,
            corrupt_target: false,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.scene_points == 0 {
            return bad("scene_points must be positive".into());
        }
        if self.scene_cameras == 0 || self.descriptors_per_point == 0 || self.descriptor_dim == 0 {
            return bad(
                "scene_cameras, descriptors_per_point and descriptor_dim must be positive".into(),
            );
        }
        if self.query_cameras < 2 {
            return bad(format!(
                "query_cameras must be at least 2, got {}",
                self.query_cameras
            ));
        }
        if !self.scene_extent.iter().all(|e| *e > 0.0 && e.is_finite()) || !(self.scene_near > 0.0)
        {
            return bad("scene extent and near distance must be positive".into());
        }
        if !(self.query_baseline > 0.0)
            || !(self.focal > 0.0)
            || self.image_width == 0
            || self.image_height == 0
        {
            return bad("query_baseline, focal and image size must be positive".into());
        }
        let non_negative = [
            self.descriptor_noise,
            self.ray_noise,
            self.pose_rotation_deg,
            self.pose_offset_fraction,
        ];
        if !non_negative.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return bad("noise and perturbation levels must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad(format!(
                "outlier_fraction must lie in [0, 1), got {}",
                self.outlier_fraction
            ));
        }
        Ok(())
    }
}

/// What the generator knows about one query set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub query_id: String,
    /// Global -> local similarity.
    pub transform: Sim3Transform,
    pub target_camera: usize,
    pub target_pose_global: CameraPose,
    pub camera_poses_global: Vec<CameraPose>,
    /// Unperturbed local-frame camera poses.
    pub local_poses: Vec<CameraPose>,
    /// Scene point each local point was generated from.
    pub local_to_scene: Vec<usize>,
    /// Local points whose descriptors were taken from another scene point.
    pub outlier: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub query: QuerySet,
    pub truth: GroundTruth,
}

fn unit_descriptor(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        if let Ok(d) = Descriptor::normalized(v) {
            return d;
        }
    }
}

fn noisy_copy(rng: &mut ChaCha8Rng, base: &Descriptor, sigma: f64) -> Descriptor {
    if sigma == 0.0 {
        return base.clone();
    }
    let v = base
        .values()
        .iter()
        .map(|&x| (f64::from(x) + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    Descriptor::normalized(v).unwrap_or_else(|_| base.clone())
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = gaussian3(rng);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

struct Scene {
    cloud: ScenePointCloud,
    bases: Vec<Descriptor>,
}

fn generate_scene(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Scene {
    let [ex, ey, ez] = config.scene_extent;
    let points: Vec<Vector3<f64>> = (0..config.scene_points)
        .map(|_| {
            Vector3::new(
                uniform(rng, -ex / 2.0, ex / 2.0),
                uniform(rng, -ey / 2.0, ey / 2.0),
                uniform(rng, config.scene_near, config.scene_near + ez),
            )
        })
        .collect();
    let panoramas: Vec<Vector3<f64>> = (0..config.scene_cameras)
        .map(|k| {
            let x = if config.scene_cameras == 1 {
                0.0
            } else {
                -ex / 2.0 + ex * k as f64 / (config.scene_cameras - 1) as f64
            };
            Vector3::new(x, 0.0, -2.0)
        })
        .collect();
    let bases: Vec<Descriptor> = (0..points.len())
        .map(|_| unit_descriptor(rng, config.descriptor_dim))
        .collect();

    let mut descriptors = Vec::new();
    for j in 0..points.len() {
        // One descriptor per panorama that "saw" the point.
        let count = rng.random_range(1..=config.descriptors_per_point.min(panoramas.len()));
        for _ in 0..count {
            descriptors.push((j, noisy_copy(rng, &bases[j], config.descriptor_noise)));
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "synthetic".into());
    metadata.insert("seed".into(), config.seed.to_string());
    metadata.insert(
        "panorama_centers".into(),
        panoramas
            .iter()
            .map(|c| format!("{} {} {}", c.x, c.y, c.z))
            .collect::<Vec<_>>()
            .join(";"),
    );
    Scene {
        cloud: ScenePointCloud {
            points,
            descriptors,
            metadata,
        },
        bases,
    }
}

/// World-to-camera rotation of a camera looking roughly along +z.
fn forward_rotation(
    rng: &mut ChaCha8Rng,
    yaw: f64,
    pitch: f64,
    roll: f64,
) -> nalgebra::Rotation3<f64> {
    let v = Vector3::new(
        uniform(rng, -pitch, pitch),
        uniform(rng, -yaw, yaw),
        uniform(rng, -roll, roll),
    );
    exp_so3(&v).inverse()
}

fn generate_query(
    config: &SyntheticConfig,
    scene: &Scene,
    id: String,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticQuery, PipelineError> {
    let intrinsics =
        CameraIntrinsics::rectilinear(config.focal, config.image_width, config.image_height)?;
    let [ex, _, _] = config.scene_extent;
    let reach = (ex / 2.0 - config.query_baseline * config.query_cameras as f64).max(0.0) * 0.5;

    // Global camera poses: target first, the others spread along its x axis.
    let target_rotation = forward_rotation(rng, 0.25, 0.05, 0.02);
    let x = if reach > 0.0 {
        uniform(rng, -reach, reach)
    } else {
        0.0
    };
    let target_center = Vector3::new(x, uniform(rng, -0.5, 0.5), uniform(rng, -1.0, 1.0));
    let mut global = vec![CameraPose::from_center(target_rotation, &target_center)];
    for i in 1..config.query_cameras {
        let along =
            target_rotation.inverse() * Vector3::new(config.query_baseline * i as f64, 0.0, 0.0);
        let jitter = Vector3::new(
            uniform(rng, -0.2, 0.2),
            uniform(rng, -0.2, 0.2),
            uniform(rng, -0.2, 0.2),
        );
        let rotation = forward_rotation(rng, 0.1, 0.03, 0.02) * target_rotation;
        global.push(CameraPose::from_center(
            rotation,
            &(target_center + along + jitter),
        ));
    }

    let scale = uniform(rng, 0.5, 2.0);
    let transform = Sim3Transform::new(scale, target_rotation, target_center)?;
    let local_true: Vec<CameraPose> = global
        .iter()
        .map(|g| {
            CameraPose::from_center(
                g.rotation() * target_rotation.inverse(),
                &transform.apply(&g.center()),
            )
        })
        .collect();

    // Visibility: in front, inside the image, seen by at least two cameras.
    let mut seen: Vec<(usize, Vec<(usize, Vector3<f64>)>)> = Vec::new();
    for (j, x) in scene.cloud.points.iter().enumerate() {
        let views: Vec<(usize, Vector3<f64>)> = global
            .iter()
            .enumerate()
            .filter_map(|(i, pose)| {
                let z = pose.transform_point(x);
                let pixel = uncalibrate(&z, &intrinsics).ok()?;
                intrinsics.contains(&pixel).then(|| (i, z.normalize()))
            })
            .collect();
        if views.len() >= 2 {
            seen.push((j, views));
        }
    }

    let num_outliers = (config.outlier_fraction * seen.len() as f64).round() as usize;
    let mut outlier = vec![false; seen.len()];
    for k in sample(rng, seen.len(), num_outliers.min(seen.len())) {
        outlier[k] = true;
    }

    // Local poses as the reconstruction reports them.
    let mut local_poses = local_true.clone();
    let rotation_error = config.pose_rotation_deg.to_radians();
    for pose in local_poses.iter_mut().skip(1) {
        let baseline = pose.center().norm();
        let rotation = exp_so3(&(random_axis(rng) * rotation_error)) * pose.rotation();
        let center = pose.center() + random_axis(rng) * (config.pose_offset_fraction * baseline);
        *pose = CameraPose::from_center(rotation, &center);
    }

    let mut cameras_model = Vec::new();
    for pose in &local_poses {
        cameras_model.push((intrinsics, *pose));
    }
    let mut points = Vec::new();
    let mut observations = Vec::new();
    let mut local_to_scene = Vec::new();
    let mut kept_outlier = Vec::new();
    for (k, (j, views)) in seen.iter().enumerate() {
        let source = if outlier[k] {
            let mut other = rng.random_range(0..scene.bases.len());
            if other == *j {
                other = (other + 1) % scene.bases.len();
            }
            other
        } else {
            *j
        };
        let mut obs = Vec::new();
        let mut rays = Vec::new();
        for (i, bearing) in views {
            let noisy = if config.ray_noise > 0.0 {
                let n = gaussian3(rng) * config.ray_noise;
                (bearing + (n - bearing * bearing.dot(&n))).normalize()
            } else {
                *bearing
            };
            let Ok(pixel) = uncalibrate(&noisy, &intrinsics) else {
                continue;
            };
            let descriptor = if config.corrupt_target && *i == 0 {
                unit_descriptor(rng, config.descriptor_dim)
            } else {
                noisy_copy(rng, &scene.bases[source], config.descriptor_noise)
            };
            let pose = &local_poses[*i];
            rays.push(Ray::new(
                pose.bearing_to_frame(&calibrate(&pixel, &intrinsics)),
                pose.center(),
            )?);
            obs.push((*i, pixel, descriptor));
        }
        if obs.len() < 2 {
            continue;
        }
        let Ok(tri) = triangulate(&rays, DEFAULT_MIN_TRIANGULATION_ANGLE) else {
            continue;
        };
        let index = points.len();
        points.push(tri.point);
        local_to_scene.push(*j);
        kept_outlier.push(outlier[k]);
        for (camera, pixel, descriptor) in obs {
            observations.push(PixelObservation {
                camera,
                point: index,
                pixel,
                descriptor: Some(descriptor),
            });
        }
    }

    let model = CameraSetModel {
        cameras: cameras_model,
        points,
        observations,
        target_camera: 0,
    };
    model.validate()?;
    Ok(SyntheticQuery {
        query: QuerySet {
            id: id.clone(),
            model,
        },
        truth: GroundTruth {
            query_id: id,
            transform,
            target_camera: 0,
            target_pose_global: global[0],
            camera_poses_global: global,
            local_poses: local_true,
            local_to_scene,
            outlier: kept_outlier,
        },
    })
}

/// One scene and `count` query sets. The scene draws from stream 0 of the
/// seeded generator and query `k` from stream `k + 1`, so adding queries
/// never changes earlier ones.
pub fn generate_suite(
    config: &SyntheticConfig,
    count: usize,
) -> Result<(ScenePointCloud, Vec<SyntheticQuery>), PipelineError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scene = generate_scene(config, &mut rng);
    let queries = (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64 + 1);
            generate_query(config, &scene, format!("q{:04}", k), &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((scene.cloud, queries))
}

/// A scene with a single query set.
pub fn generate_synthetic(
    config: &SyntheticConfig,
) -> Result<(ScenePointCloud, SyntheticQuery), PipelineError> {
    let (scene, mut queries) = generate_suite(config, 1)?;
    Ok((scene, queries.remove(0)))
}
