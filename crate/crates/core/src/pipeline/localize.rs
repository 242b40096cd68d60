use log::{debug, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geometry::{calibrate, CameraPose, Ray, Sim3Transform};
use crate::local_model::CameraSetModel;
use crate::matcher::{
    match_bidirectional, DescriptorIndex, LocalPoint, ScenePointCloud, DEFAULT_RATIO_THRESHOLD,
};
use crate::refine::{refine_joint, refine_transform_lm, JointProblem, LmConfig, RayObservation};
use crate::solver::{
    ransac_estimate, ransac_single_camera, RansacConfig, RayPointCorrespondence,
    MIN_CORRESPONDENCES,
};

/// A camera set to localize, as produced by the local reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub id: String,
    pub model: CameraSetModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizeMode {
    /// Single-image attempt first, image-set path when it fails.
    #[default]
    Auto,
    SingleImage,
    ImageSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub mode: LocalizeMode,
    pub ratio_threshold: f64,
    /// Inliers needed for the single-image path to count as registered.
    pub single_image_min_inliers: usize,
    pub ransac: RansacConfig,
    pub lm: LmConfig,
    /// Run the joint refinement over cameras and local points after the
    /// transform-only refinement.
    pub joint_refinement: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            mode: LocalizeMode::Auto,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            single_image_min_inliers: 12,
            ransac: RansacConfig::default(),
            lm: LmConfig::default(),
            joint_refinement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationStatus {
    SingleImageSuccess,
    ImageSetSuccess,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub query_id: String,
    pub status: LocalizationStatus,
    pub target_pose_global: Option<CameraPose>,
    /// Global -> local similarity; only the image-set path estimates it.
    pub transform: Option<Sim3Transform>,
    pub inlier_count: usize,
    pub match_count: usize,
    /// Global poses of every camera of the set for image-set results, of the
    /// target alone for single-image results.
    pub per_camera_poses_global: Vec<CameraPose>,
    pub failure: Option<String>,
}

impl LocalizationResult {
    fn failed(query_id: &str, match_count: usize, reason: String) -> Self {
        Self {
            query_id: query_id.to_string(),
            status: LocalizationStatus::Failed,
            target_pose_global: None,
            transform: None,
            inlier_count: 0,
            match_count,
            per_camera_poses_global: Vec::new(),
            failure: Some(reason),
        }
    }

    pub fn is_registered(&self) -> bool {
        self.status != LocalizationStatus::Failed
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold < 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "ratio_threshold must lie in (0, 1), got {}",
                self.ratio_threshold
            )));
        }
        if self.single_image_min_inliers < MIN_CORRESPONDENCES {
            return Err(PipelineError::InvalidConfig(format!(
                "single_image_min_inliers must be at least {MIN_CORRESPONDENCES}"
            )));
        }
        self.ransac.validate()?;
        self.lm.validate()?;
        Ok(())
    }
}

/// Localizes the target camera of `query` against the scene.
///
/// Failure to localize is a result with status `Failed`; errors are
/// reserved for invalid inputs.
pub fn localize(
    scene: &ScenePointCloud,
    index: &DescriptorIndex,
    query: &QuerySet,
    config: &LocalizeConfig,
) -> Result<LocalizationResult, PipelineError> {
    config.validate()?;
    query.model.validate()?;
    let mut single_failure = None;
    if config.mode != LocalizeMode::ImageSet {
        match single_image(scene, index, query, config)? {
            Ok(result) => return Ok(result),
            Err(failed) => {
                debug!(
                    "{}: single-image path failed: {:?}",
                    query.id, failed.failure
                );
                if config.mode == LocalizeMode::SingleImage {
                    return Ok(failed);
                }
                single_failure = failed.failure;
            }
        }
    }
    let mut result = image_set(scene, index, query, config)?;
    if let (Some(a), Some(b)) = (&single_failure, &result.failure) {
        result.failure = Some(format!("single image: {a}; image set: {b}"));
    }
    Ok(result)
}

/// 2D-3D attempt with the target camera's own features. The inner result is
/// `Err` (a Failed record) when fewer than the required inliers are found.
fn single_image(
    scene: &ScenePointCloud,
    index: &DescriptorIndex,
    query: &QuerySet,
    config: &LocalizeConfig,
) -> Result<Result<LocalizationResult, LocalizationResult>, PipelineError> {
    let model = &query.model;
    let target = model.target_camera;
    let intrinsics = &model.cameras[target].0;
    let features: Vec<(LocalPoint, Vector3<f64>)> = model
        .observations
        .iter()
        .filter(|o| o.camera == target)
        .filter_map(|o| {
            let d = o.descriptor.clone()?;
            Some((
                LocalPoint {
                    position: Vector3::zeros(),
                    descriptors: vec![d],
                },
                calibrate(&o.pixel, intrinsics),
            ))
        })
        .collect();
    let points: Vec<LocalPoint> = features.iter().map(|(p, _)| p.clone()).collect();
    let matches = match_bidirectional(&points, index, config.ratio_threshold)?;
    if matches.len() < MIN_CORRESPONDENCES {
        return Ok(Err(LocalizationResult::failed(
            &query.id,
            matches.len(),
            format!("{} target-image matches", matches.len()),
        )));
    }
    let correspondences: Vec<RayPointCorrespondence> = matches
        .iter()
        .map(|m| {
            let ray = Ray::new(features[m.local_index].1, Vector3::zeros())?;
            Ok(RayPointCorrespondence::new(
                ray,
                &scene.points[m.scene_index],
            ))
        })
        .collect::<Result<_, PipelineError>>()?;
    let ransac = RansacConfig {
        min_inliers: config.single_image_min_inliers,
        ..config.ransac
    };
    match ransac_single_camera(&correspondences, &ransac) {
        Ok(out) if out.num_inliers >= config.single_image_min_inliers => {
            Ok(Ok(LocalizationResult {
                query_id: query.id.clone(),
                status: LocalizationStatus::SingleImageSuccess,
                target_pose_global: Some(out.model),
                transform: None,
                inlier_count: out.num_inliers,
                match_count: matches.len(),
                per_camera_poses_global: vec![out.model],
                failure: None,
            }))
        }
        Ok(out) => Ok(Err(LocalizationResult::failed(
            &query.id,
            matches.len(),
            format!("{} inliers", out.num_inliers),
        ))),
        Err(e) => Ok(Err(LocalizationResult::failed(
            &query.id,
            matches.len(),
            e.to_string(),
        ))),
    }
}

/// Ray-point correspondences of an image set: every observation of a matched
/// local point becomes one ray towards the matched scene point.
pub struct SetCorrespondences {
    pub rays: Vec<RayPointCorrespondence>,
    /// Per ray, the observation in the observing camera's frame; `point`
    /// indexes `global_points`.
    pub observations: Vec<RayObservation>,
    pub global_points: Vec<Vector3<f64>>,
}

pub fn set_correspondences(
    model: &CameraSetModel,
    scene: &ScenePointCloud,
    matches: &[crate::matcher::PointMatch],
) -> Result<SetCorrespondences, PipelineError> {
    let bearings = model.bearings();
    let mut by_point = vec![None; model.points.len()];
    let mut global_points = Vec::with_capacity(matches.len());
    for m in matches {
        by_point[m.local_index] = Some(global_points.len());
        global_points.push(scene.points[m.scene_index]);
    }
    let mut rays = Vec::new();
    let mut observations = Vec::new();
    for (o, bearing) in model.observations.iter().zip(&bearings) {
        let Some(g) = by_point[o.point] else { continue };
        let pose = &model.cameras[o.camera].1;
        let ray = Ray::new(pose.bearing_to_frame(bearing), pose.center())?;
        rays.push(RayPointCorrespondence::new(ray, &global_points[g]));
        observations.push(RayObservation {
            camera: o.camera,
            bearing: *bearing,
            point: g,
        });
    }
    Ok(SetCorrespondences {
        rays,
        observations,
        global_points,
    })
}

/// Transform-only refinement of `initial` over the inlier rays, then the
/// joint refinement when enabled. A failing stage logs a warning and leaves
/// the previous estimate in place. Returns the transform and the local camera
/// poses.
pub fn refine_registration(
    model: &CameraSetModel,
    corr: &SetCorrespondences,
    inliers: &[bool],
    initial: &Sim3Transform,
    config: &LocalizeConfig,
) -> (Sim3Transform, Vec<CameraPose>) {
    let inlier_obs: Vec<RayObservation> = corr
        .observations
        .iter()
        .zip(inliers)
        .filter(|(_, &keep)| keep)
        .map(|(o, _)| *o)
        .collect();

    let mut cameras = model.poses();
    let mut transform = *initial;
    match refine_transform_lm(
        &transform,
        &inlier_obs,
        &corr.global_points,
        &cameras,
        &config.lm,
    ) {
        Ok(r) => transform = r.transform,
        Err(e) => warn!("transform refinement failed, keeping the linear estimate: {e}"),
    }
    if !config.joint_refinement {
        return (transform, cameras);
    }
    let bearings = model.bearings();
    let problem = JointProblem {
        transform,
        cameras: cameras.clone(),
        local_points: model.points.clone(),
        global_points: corr.global_points.clone(),
        global_obs: inlier_obs,
        local_obs: model
            .observations
            .iter()
            .zip(&bearings)
            .map(|(o, b)| RayObservation {
                camera: o.camera,
                bearing: *b,
                point: o.point,
            })
            .collect(),
    };
    match refine_joint(&problem, &config.lm) {
        Ok(r) => {
            transform = r.problem.transform;
            cameras = r.problem.cameras;
        }
        Err(e) => warn!("joint refinement failed, keeping the transform-only result: {e}"),
    }
    (transform, cameras)
}

fn image_set(
    scene: &ScenePointCloud,
    index: &DescriptorIndex,
    query: &QuerySet,
    config: &LocalizeConfig,
) -> Result<LocalizationResult, PipelineError> {
    let model = &query.model;
    let matches = match_bidirectional(&model.local_points(), index, config.ratio_threshold)?;
    let corr = set_correspondences(model, scene, &matches)?;
    if corr.rays.len() < MIN_CORRESPONDENCES {
        return Ok(LocalizationResult::failed(
            &query.id,
            matches.len(),
            format!("{} matched rays", corr.rays.len()),
        ));
    }
    let (ransac, _) = match ransac_estimate(&corr.rays, &config.ransac) {
        Ok(out) => out,
        Err(e) => {
            return Ok(LocalizationResult::failed(
                &query.id,
                matches.len(),
                e.to_string(),
            ))
        }
    };
    let (transform, cameras) =
        refine_registration(model, &corr, &ransac.inliers, &ransac.model, config);
    let per_camera: Vec<CameraPose> = cameras.iter().map(|c| c.registered(&transform)).collect();
    Ok(LocalizationResult {
        query_id: query.id.clone(),
        status: LocalizationStatus::ImageSetSuccess,
        target_pose_global: Some(per_camera[model.target_camera]),
        transform: Some(transform),
        inlier_count: ransac.num_inliers,
        match_count: matches.len(),
        per_camera_poses_global: per_camera,
        failure: None,
    })
}
