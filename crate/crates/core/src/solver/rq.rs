use nalgebra::{Matrix3, Matrix3x4, Rotation3};

use super::SolverError;
use crate::geometry::Sim3Transform;

/// RQ decomposition `m = K R` with `K` upper triangular and `R` orthogonal.
///
/// The diagonal of `K` is made non-negative. When that leaves `R` with
/// determinant -1 both factors are negated, so `R` is always a proper
/// rotation and `K` carries the sign of `det(m)`.
pub fn rq_decompose(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    // Reversal permutation: turns QR of (P m)^T into RQ of m.
    let p = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (p * m).transpose().qr();
    let mut k = p * qr.r().transpose() * p;
    let mut r = p * qr.q().transpose();

    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    if r.determinant() < 0.0 {
        k.neg_mut();
        r.neg_mut();
    }
    (k, r)
}

/// Projects an unconstrained 3x4 estimate onto a valid similarity
/// `s [R | t]`, with `s = trace(K) / 3` and `t = K^-1 m4`.
pub fn project_to_sim3(raw: &Matrix3x4<f64>) -> Result<Sim3Transform, SolverError> {
    let m = raw.fixed_view::<3, 3>(0, 0).into_owned();
    let det = m.determinant();
    if !(det.abs() >= 1e-12) {
        return Err(SolverError::SingularTransform { det });
    }
    let (k, r) = rq_decompose(&m);
    let scale = k.trace() / 3.0;
    if !(scale > 0.0) {
        return Err(SolverError::NegativeScale { scale });
    }
    let k_inv = k
        .try_inverse()
        .ok_or(SolverError::SingularTransform { det })?;
    let t = k_inv * raw.column(3);
    let rotation = Rotation3::from_matrix_unchecked(r);
    Sim3Transform::from_scaled_pose(scale, rotation, &t)
        .map_err(|_| SolverError::NegativeScale { scale })
}
