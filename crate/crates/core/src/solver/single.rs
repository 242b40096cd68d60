use nalgebra::{Matrix3x4, Rotation3};

use super::dlt::{assemble, PointNormalization};
use super::rq::rq_decompose;
use super::{check_count, RayPointCorrespondence, SolverError, DEGENERATE_CONDITION};
use crate::geometry::CameraPose;

/// Pose of a single camera from correspondences whose rays share one center.
///
/// With a common center the right-hand side vanishes once the center is moved
/// to the origin, so `vec(T)` is the null vector of `A`. Scale is unobservable
/// and fixed to 1. The returned `[R | t]` satisfies `r_i ∝ R X_i + t`, i.e. it
/// maps global points into the frame centered at the shared ray center.
pub fn estimate_single_camera_pose(
    correspondences: &[RayPointCorrespondence],
) -> Result<CameraPose, SolverError> {
    check_count(correspondences.len())?;
    let center = correspondences[0].ray.center();
    let tol = 1e-9 * (1.0 + center.norm());
    if correspondences
        .iter()
        .any(|c| (c.ray.center() - center).norm() > tol)
    {
        return Err(SolverError::InvalidConfig(
            "single-camera solver needs a common ray center".into(),
        ));
    }

    let norm = PointNormalization::fit(correspondences);
    let (a, _) = assemble(correspondences, Some(&norm));
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    if order.len() < 12 {
        return Err(SolverError::DegenerateConfiguration {
            condition: f64::INFINITY,
        });
    }
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[10]];
    let condition = if second_smallest > 0.0 {
        largest / second_smallest
    } else {
        f64::INFINITY
    };
    if !(condition <= DEGENERATE_CONDITION) {
        return Err(SolverError::DegenerateConfiguration { condition });
    }

    let null = v_t.row(order[11]).transpose();
    let mut t = norm.denormalize(&Matrix3x4::from_column_slice(null.as_slice()));
    let m = t.fixed_view::<3, 3>(0, 0).into_owned();
    let det = m.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(SolverError::SingularTransform { det });
    }
    if det < 0.0 {
        t.neg_mut();
    }
    let (k, r) = rq_decompose(&t.fixed_view::<3, 3>(0, 0).into_owned());
    let k_inv = k
        .try_inverse()
        .ok_or(SolverError::SingularTransform { det })?;
    let translation = k_inv * t.column(3);
    Ok(CameraPose::new(
        Rotation3::from_matrix_unchecked(r),
        translation,
    ))
}
