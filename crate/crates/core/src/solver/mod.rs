//! Linear camera-set pose solver.
//!
//! Each correspondence pairs a ray of the camera set (local frame) with a
//! global scene point. The unknown similarity `T` must satisfy
//! `r × (T X - C) = 0`, which is linear in the twelve entries of `T`. The
//! least-squares solution is projected back onto valid similarities by an RQ
//! decomposition of its left 3x3 block.

mod dlt;
mod ransac;
mod rq;
mod single;

pub use dlt::{build_dlt_system, estimate_pose_dlt, solve_dlt};
pub use ransac::{ransac_estimate, ransac_single_camera, RansacConfig, RansacOutput};
pub use rq::{project_to_sim3, rq_decompose};
pub use single::estimate_single_camera_pose;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{HomogeneousPoint, Ray};

/// Fewest correspondences the linear solver accepts.
pub const MIN_CORRESPONDENCES: usize = 6;

/// Condition number above which the linear system is declared degenerate.
pub const DEGENERATE_CONDITION: f64 = 1e12;

/// Condition number above which the SVD route replaces pivoted QR.
pub const SVD_FALLBACK_CONDITION: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, required: usize },
    #[error("degenerate configuration (condition number {condition:e})")]
    DegenerateConfiguration { condition: f64 },
    #[error("left 3x3 block is singular (det {det:e})")]
    SingularTransform { det: f64 },
    #[error("recovered scale is not positive ({scale})")]
    NegativeScale { scale: f64 },
    #[error("no consensus: best sample had {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// A ray of the camera set paired with the global point it observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPointCorrespondence {
    pub ray: Ray,
    pub global_point: HomogeneousPoint,
}

impl RayPointCorrespondence {
    pub fn new(ray: Ray, global_point: &Vector3<f64>) -> Self {
        Self {
            ray,
            global_point: HomogeneousPoint::from_euclidean(global_point),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DltDiagnostics {
    /// Ratio of extreme singular values of the (normalized) design matrix.
    pub condition_number: f64,
    /// RMS of `A vec(T) - b` over all rows, evaluated at the returned solution.
    pub residual_rms: f64,
    pub num_correspondences: usize,
}

fn check_count(n: usize) -> Result<(), SolverError> {
    if n < MIN_CORRESPONDENCES {
        return Err(SolverError::TooFewCorrespondences {
            got: n,
            required: MIN_CORRESPONDENCES,
        });
    }
    Ok(())
}
