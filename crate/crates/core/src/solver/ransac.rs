use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_count, estimate_pose_dlt, estimate_single_camera_pose, DltDiagnostics,
    RayPointCorrespondence, SolverError, MIN_CORRESPONDENCES,
};
use crate::geometry::{angle_between_unit, CameraPose, Sim3Transform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Angle between observed and predicted ray, radians.
    pub inlier_angle_threshold: f64,
    pub min_inliers: usize,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_angle_threshold: 0.01,
            min_inliers: 12,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.inlier_angle_threshold > 0.0
            && self.inlier_angle_threshold < std::f64::consts::FRAC_PI_2)
        {
            return Err(SolverError::InvalidConfig(format!(
                "inlier_angle_threshold must lie in (0, pi/2), got {}",
                self.inlier_angle_threshold
            )));
        }
        if self.min_inliers == 0 {
            return Err(SolverError::InvalidConfig(
                "min_inliers must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutput<M> {
    pub model: M,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub iterations: usize,
}

const CONFIDENCE: f64 = 0.999;
const MAX_LOCAL_REFITS: usize = 5;

fn required_iterations(inlier_ratio: f64, sample_size: usize, cap: usize) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let p_good = inlier_ratio.powi(sample_size as i32);
    if p_good <= f64::EPSILON {
        return cap;
    }
    let k = (1.0 - CONFIDENCE).ln() / (1.0 - p_good).ln();
    if k.is_finite() {
        (k.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Hypothesize-and-verify loop shared by the camera-set and single-camera
/// estimators. Every new best hypothesis is re-estimated on its consensus
/// set before the next sample. Deterministic for a given seed.
fn consensus<M, F, I>(
    n: usize,
    config: &RansacConfig,
    fit: F,
    is_inlier: I,
) -> Result<RansacOutput<M>, SolverError>
where
    F: Fn(&[usize]) -> Option<M>,
    I: Fn(&M, usize) -> bool,
{
    config.validate()?;
    check_count(n)?;

    let mask_of = |model: &M| -> (Vec<bool>, usize) {
        let mask: Vec<bool> = (0..n).map(|i| is_inlier(model, i)).collect();
        let count = mask.iter().filter(|&&b| b).count();
        (mask, count)
    };

    // Re-estimates on the consensus set until it stops growing.
    let local_optimize = |mut model: M, mut mask: Vec<bool>, mut count: usize| {
        for _ in 0..MAX_LOCAL_REFITS {
            if count < MIN_CORRESPONDENCES {
                break;
            }
            let members: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            let Some(refit) = fit(&members) else { break };
            let (refit_mask, refit_count) = mask_of(&refit);
            if refit_count < count {
                break;
            }
            let stable = refit_mask == mask;
            model = refit;
            mask = refit_mask;
            count = refit_count;
            if stable {
                break;
            }
        }
        (model, mask, count)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut best: Option<(M, Vec<bool>, usize)> = None;
    let mut needed = config.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(config.max_iterations) {
        iterations += 1;
        let picked = sample(&mut rng, n, MIN_CORRESPONDENCES).into_vec();
        let Some(model) = fit(&picked) else { continue };
        let (mask, count) = mask_of(&model);
        if best.as_ref().is_none_or(|b| count > b.2) {
            let improved = local_optimize(model, mask, count);
            needed = required_iterations(
                improved.2 as f64 / n as f64,
                MIN_CORRESPONDENCES,
                config.max_iterations,
            );
            best = Some(improved);
        }
    }

    let Some((model, mask, count)) = best else {
        return Err(SolverError::NoConsensus {
            best: 0,
            required: config.min_inliers,
        });
    };

    if count < config.min_inliers {
        return Err(SolverError::NoConsensus {
            best: count,
            required: config.min_inliers,
        });
    }
    Ok(RansacOutput {
        model,
        inliers: mask,
        num_inliers: count,
        iterations,
    })
}

/// Robust camera-set pose: six-point DLT hypotheses scored by angular ray
/// error, then re-estimated on the consensus set.
pub fn ransac_estimate(
    correspondences: &[RayPointCorrespondence],
    config: &RansacConfig,
) -> Result<(RansacOutput<Sim3Transform>, DltDiagnostics), SolverError> {
    let subset = |idx: &[usize]| -> Vec<RayPointCorrespondence> {
        idx.iter().map(|&i| correspondences[i]).collect()
    };
    let threshold = config.inlier_angle_threshold;
    let out = consensus(
        correspondences.len(),
        config,
        |idx| estimate_pose_dlt(&subset(idx)).ok().map(|(t, _)| t),
        |t: &Sim3Transform, i| {
            let c = &correspondences[i];
            c.ray.angle_to(&t.apply(&c.global_point.euclidean())) < threshold
        },
    )?;
    let members: Vec<usize> = (0..correspondences.len())
        .filter(|&i| out.inliers[i])
        .collect();
    let (_, diagnostics) = estimate_pose_dlt(&subset(&members))?;
    Ok((out, diagnostics))
}

/// Robust single-camera pose for correspondences sharing one ray center.
pub fn ransac_single_camera(
    correspondences: &[RayPointCorrespondence],
    config: &RansacConfig,
) -> Result<RansacOutput<CameraPose>, SolverError> {
    let threshold = config.inlier_angle_threshold;
    consensus(
        correspondences.len(),
        config,
        |idx| {
            let subset: Vec<_> = idx.iter().map(|&i| correspondences[i]).collect();
            estimate_single_camera_pose(&subset).ok()
        },
        |pose: &CameraPose, i| {
            let c = &correspondences[i];
            let p = pose.transform_point(&c.global_point.euclidean());
            let n = p.norm();
            n > 0.0 && angle_between_unit(c.ray.direction(), &(p / n)) < threshold
        },
    )
}
