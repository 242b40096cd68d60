//! Nonlinear refinement by ray reprojection error.
//!
//! Residuals are 3-vector differences between observed unit bearings and the
//! normalized projection of the predicted point; the optimizer minimizes the
//! sum of their squared norms. Rotations are updated by left-multiplied
//! axis-angle increments and the similarity scale through its logarithm.

mod cameras;
mod joint;
mod lm;
mod transform;

pub use joint::{
    joint_jacobians, refine_joint, refine_joint_with, JointOptions, JointProblem, JointRefinement,
};
pub use lm::{JacobianComparison, LmConfig, Termination, SCHUR_POINT_THRESHOLD};
pub use transform::{refine_transform_lm, transform_jacobians, TransformRefinement};

pub(crate) use cameras::CameraBlocks;
pub(crate) use lm::{compare_jacobians, minimize, LmOutcome, LmProblem, ResidualBlock};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("gauge underconstrained: {0}")]
    GaugeUnderconstrained(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// A unit bearing observed by camera `camera` (in that camera's frame)
/// towards point `point` of some point list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayObservation {
    pub camera: usize,
    pub bearing: Vector3<f64>,
    pub point: usize,
}

/// `d(-z/|z|)/dz`: derivative of the residual `r - z/|z|` with respect to `z`.
pub(crate) fn residual_wrt_projection(z: &Vector3<f64>) -> Matrix3<f64> {
    let n = z.norm();
    let u = z / n;
    -(Matrix3::identity() - u * u.transpose()) / n
}

/// Sum of residual norms (the unsquared objective) alongside the squared cost.
pub(crate) fn cost_pair(residuals: &[Vector3<f64>]) -> (f64, f64) {
    residuals.iter().fold((0.0, 0.0), |(sq, n), r| {
        (sq + r.norm_squared(), n + r.norm())
    })
}

fn check_observations(
    obs: &[RayObservation],
    num_cameras: usize,
    num_points: usize,
    what: &str,
) -> Result<(), RefineError> {
    for (i, o) in obs.iter().enumerate() {
        if o.camera >= num_cameras || o.point >= num_points {
            return Err(RefineError::InvalidProblem(format!(
                "{what} observation {i} references camera {} / point {} out of range",
                o.camera, o.point
            )));
        }
        if !((o.bearing.norm() - 1.0).abs() < 1e-6) {
            return Err(RefineError::InvalidProblem(format!(
                "{what} observation {i} bearing is not unit length"
            )));
        }
    }
    Ok(())
}
