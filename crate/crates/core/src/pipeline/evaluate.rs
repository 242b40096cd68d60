use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GroundTruth, LocalizationResult, LocalizationStatus, PipelineError};
use crate::geometry::{rotation_angle, CameraPose};

/// Pose error of one registered image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageError {
    pub query_id: String,
    /// Camera index within the query set.
    pub camera: usize,
    pub status: LocalizationStatus,
    /// Distance between estimated and true camera centers.
    pub location: f64,
    /// Angle of the relative rotation, in degrees.
    pub orientation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    /// None for an empty sample; the median of an even count is the mean of
    /// the two middle values.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            min: v[0],
            median,
            max: v[n - 1],
            mean: v.iter().sum::<f64>() / n as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub registered: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub registration: Registration,
    pub single_image: usize,
    pub image_set: usize,
    /// Target images only.
    pub location: Option<Summary>,
    pub orientation_deg: Option<Summary>,
    /// Every registered image of every set: all cameras for image-set
    /// results, the target alone for single-image results.
    pub set_location: Option<Summary>,
    pub set_orientation_deg: Option<Summary>,
    /// Target errors, sorted by query id.
    pub images: Vec<ImageError>,
    /// Sorted by query id, then camera.
    pub set_images: Vec<ImageError>,
}

/// Compares localization results with ground truth. Both sides must cover
/// exactly the same query ids.
pub fn evaluate(
    results: &[LocalizationResult],
    truths: &[GroundTruth],
) -> Result<EvalReport, PipelineError> {
    let mut by_id = BTreeMap::new();
    for t in truths {
        if by_id.insert(t.query_id.as_str(), t).is_some() {
            return Err(PipelineError::MismatchedIds(format!(
                "duplicate ground truth for {}",
                t.query_id
            )));
        }
    }
    let mut seen = BTreeSet::new();
    for r in results {
        if !seen.insert(r.query_id.as_str()) {
            return Err(PipelineError::MismatchedIds(format!(
                "duplicate result for {}",
                r.query_id
            )));
        }
        if !by_id.contains_key(r.query_id.as_str()) {
            return Err(PipelineError::MismatchedIds(format!(
                "no ground truth for {}",
                r.query_id
            )));
        }
    }
    if let Some(missing) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(PipelineError::MismatchedIds(format!(
            "no result for {missing}"
        )));
    }

    let mut images = Vec::new();
    let mut set_images = Vec::new();
    for r in results {
        let Some(pose) = r.target_pose_global.filter(|_| r.is_registered()) else {
            continue;
        };
        let truth = by_id[r.query_id.as_str()];
        let error = |camera: usize, est: &CameraPose, gt: &CameraPose| ImageError {
            query_id: r.query_id.clone(),
            camera,
            status: r.status,
            location: (est.center() - gt.center()).norm(),
            orientation_deg: rotation_angle(est.rotation(), gt.rotation()).to_degrees(),
        };
        images.push(error(truth.target_camera, &pose, &truth.target_pose_global));
        match r.status {
            LocalizationStatus::ImageSetSuccess => {
                if r.per_camera_poses_global.len() != truth.camera_poses_global.len() {
                    return Err(PipelineError::MismatchedIds(format!(
                        "{}: {} estimated cameras, {} in ground truth",
                        r.query_id,
                        r.per_camera_poses_global.len(),
                        truth.camera_poses_global.len()
                    )));
                }
                for (i, (est, gt)) in r
                    .per_camera_poses_global
                    .iter()
                    .zip(&truth.camera_poses_global)
                    .enumerate()
                {
                    set_images.push(error(i, est, gt));
                }
            }
            _ => set_images.push(error(truth.target_camera, &pose, &truth.target_pose_global)),
        }
    }
    images.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    set_images.sort_by(|a, b| (&a.query_id, a.camera).cmp(&(&b.query_id, b.camera)));
    let count = |s| images.iter().filter(|e| e.status == s).count();
    let summarize = |errors: &[ImageError]| {
        let locations: Vec<f64> = errors.iter().map(|e| e.location).collect();
        let angles: Vec<f64> = errors.iter().map(|e| e.orientation_deg).collect();
        (Summary::of(&locations), Summary::of(&angles))
    };
    let (location, orientation_deg) = summarize(&images);
    let (set_location, set_orientation_deg) = summarize(&set_images);
    let total = results.len();
    Ok(EvalReport {
        registration: Registration {
            registered: images.len(),
            total,
            rate: if total == 0 {
                0.0
            } else {
                images.len() as f64 / total as f64
            },
        },
        single_image: count(LocalizationStatus::SingleImageSuccess),
        image_set: count(LocalizationStatus::ImageSetSuccess),
        location,
        orientation_deg,
        set_location,
        set_orientation_deg,
        images,
        set_images,
    })
}
