use nalgebra::{DVector, Matrix3, Matrix3xX, SMatrix, Vector3};

use super::lm::{compare_jacobians, minimize, LmOutcome};
use super::{
    check_observations, cost_pair, residual_wrt_projection, JacobianComparison, LmConfig,
    LmProblem, RayObservation, RefineError, ResidualBlock, Termination,
};
use crate::geometry::{exp_so3, ray_residual, skew, CameraPose, HomogeneousPoint, Sim3Transform};

/// Result of refining the similarity alone.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformRefinement {
    pub transform: Sim3Transform,
    /// Sum of squared residual norms at the returned transform.
    pub cost: f64,
    /// Sum of (unsquared) residual norms at the returned transform.
    pub sum_of_norms: f64,
    pub initial_cost: f64,
    pub initial_sum_of_norms: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Parameters: `[log s, rotation increment (3), center (3)]`.
pub(super) struct TransformProblem<'a> {
    pub observations: &'a [RayObservation],
    pub global_points: &'a [Vector3<f64>],
    pub cameras: &'a [CameraPose],
}

impl TransformProblem<'_> {
    fn validate(&self) -> Result<(), RefineError> {
        if self.observations.len() < crate::solver::MIN_CORRESPONDENCES {
            return Err(RefineError::InvalidProblem(format!(
                "need at least {} observations, got {}",
                crate::solver::MIN_CORRESPONDENCES,
                self.observations.len()
            )));
        }
        check_observations(
            self.observations,
            self.cameras.len(),
            self.global_points.len(),
            "global",
        )
    }
}

pub(super) fn retract_transform(t: &Sim3Transform, delta: &[f64]) -> Sim3Transform {
    let rot = exp_so3(&Vector3::new(delta[1], delta[2], delta[3]));
    Sim3Transform::from_parts_unchecked(
        t.scale() * delta[0].exp(),
        rot * t.rotation(),
        t.center() + Vector3::new(delta[4], delta[5], delta[6]),
    )
}

/// Jacobian of `lhs * y` with `y = s R (X - C)` with respect to the seven
/// transform parameters.
pub(super) fn transform_block(
    lhs: &Matrix3<f64>,
    t: &Sim3Transform,
    y: &Vector3<f64>,
) -> SMatrix<f64, 3, 7> {
    let mut j = SMatrix::<f64, 3, 7>::zeros();
    j.column_mut(0).copy_from(&(lhs * y));
    j.fixed_columns_mut::<3>(1).copy_from(&(-lhs * skew(y)));
    j.fixed_columns_mut::<3>(4)
        .copy_from(&(-lhs * t.rotation().matrix() * t.scale()));
    j
}

impl LmProblem for TransformProblem<'_> {
    type State = Sim3Transform;

    fn dense_dim(&self) -> usize {
        7
    }

    fn num_point_blocks(&self) -> usize {
        0
    }

    fn residuals(&self, t: &Sim3Transform) -> Result<Vec<Vector3<f64>>, RefineError> {
        self.observations
            .iter()
            .map(|o| {
                let y = HomogeneousPoint::from_euclidean(&t.apply(&self.global_points[o.point]));
                ray_residual(&o.bearing, &self.cameras[o.camera], &y)
                    .map_err(|e| RefineError::NumericalFailure(e.to_string()))
            })
            .collect()
    }

    fn linearize(&self, t: &Sim3Transform) -> Result<Vec<ResidualBlock>, RefineError> {
        let residuals = self.residuals(t)?;
        Ok(self
            .observations
            .iter()
            .zip(residuals)
            .map(|(o, residual)| {
                let cam = &self.cameras[o.camera];
                let y = t.apply(&self.global_points[o.point]);
                let z = cam.transform_point(&y);
                let lhs = residual_wrt_projection(&z) * cam.rotation().matrix();
                let dense = Matrix3xX::from_column_slice(transform_block(&lhs, t, &y).as_slice());
                ResidualBlock {
                    residual,
                    dense,
                    point: None,
                }
            })
            .collect())
    }

    fn retract(&self, t: &Sim3Transform, delta: &DVector<f64>) -> Sim3Transform {
        retract_transform(t, delta.as_slice())
    }
}

/// Minimizes the ray reprojection error over the similarity only, keeping the
/// intra-set camera poses fixed.
pub fn refine_transform_lm(
    initial: &Sim3Transform,
    observations: &[RayObservation],
    global_points: &[Vector3<f64>],
    cameras: &[CameraPose],
    config: &LmConfig,
) -> Result<TransformRefinement, RefineError> {
    let problem = TransformProblem {
        observations,
        global_points,
        cameras,
    };
    problem.validate()?;
    let (initial_cost, initial_sum_of_norms) = cost_pair(&problem.residuals(initial)?);
    let LmOutcome {
        state,
        iterations,
        termination,
        cost_history,
        ..
    } = minimize(&problem, *initial, config)?;
    let (cost, sum_of_norms) = cost_pair(&problem.residuals(&state)?);
    Ok(TransformRefinement {
        transform: state,
        cost,
        sum_of_norms,
        initial_cost,
        initial_sum_of_norms,
        iterations,
        termination,
        cost_history,
    })
}

/// Analytic vs central-difference Jacobian of the transform-only problem.
pub fn transform_jacobians(
    transform: &Sim3Transform,
    observations: &[RayObservation],
    global_points: &[Vector3<f64>],
    cameras: &[CameraPose],
    h: f64,
) -> Result<JacobianComparison, RefineError> {
    let problem = TransformProblem {
        observations,
        global_points,
        cameras,
    };
    problem.validate()?;
    compare_jacobians(&problem, transform, h)
}
