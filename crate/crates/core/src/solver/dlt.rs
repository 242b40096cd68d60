use nalgebra::{DMatrix, DVector, Matrix3x4, Vector3};

use super::rq::project_to_sim3;
use super::{
    check_count, DltDiagnostics, RayPointCorrespondence, SolverError, DEGENERATE_CONDITION,
    SVD_FALLBACK_CONDITION,
};
use crate::geometry::{skew, Sim3Transform};

/// Builds the stacked system `A vec(T) = b`.
///
/// `vec` is column-major, so row block `i` is `X_i^T ⊗ [r_i]_x` and the
/// matching right-hand side block is `[r_i]_x C_i`.
pub fn build_dlt_system(
    correspondences: &[RayPointCorrespondence],
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    check_count(correspondences.len())?;
    Ok(assemble(correspondences, None))
}

/// Translation and isotropic scaling applied to global points before solving.
#[derive(Debug, Clone, Copy)]
pub(super) struct PointNormalization {
    centroid: Vector3<f64>,
    scale: f64,
}

impl PointNormalization {
    pub(super) fn fit(correspondences: &[RayPointCorrespondence]) -> Self {
        let n = correspondences.len() as f64;
        let centroid = correspondences
            .iter()
            .fold(Vector3::zeros(), |acc, c| acc + c.global_point.euclidean())
            / n;
        let mean_sq = correspondences
            .iter()
            .map(|c| (c.global_point.euclidean() - centroid).norm_squared())
            .sum::<f64>()
            / n;
        let rms = mean_sq.sqrt();
        let scale = if rms > 1e-300 && rms.is_finite() {
            3f64.sqrt() / rms
        } else {
            1.0
        };
        Self { centroid, scale }
    }

    pub(super) fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.centroid) * self.scale
    }

    /// Maps a transform acting on normalized points back to raw points: `T' N`.
    pub(super) fn denormalize(&self, t: &Matrix3x4<f64>) -> Matrix3x4<f64> {
        let m = t.fixed_view::<3, 3>(0, 0) * self.scale;
        let mut out = Matrix3x4::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
        out.set_column(3, &(t.column(3) - m * self.centroid));
        out
    }
}

pub(super) fn assemble(
    correspondences: &[RayPointCorrespondence],
    normalization: Option<&PointNormalization>,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = correspondences.len();
    let mut a = DMatrix::zeros(3 * n, 12);
    let mut b = DVector::zeros(3 * n);
    for (i, c) in correspondences.iter().enumerate() {
        let s = skew(c.ray.direction());
        let x = c.global_point.euclidean();
        let x = match normalization {
            Some(norm) => norm.apply(&x),
            None => x,
        };
        let xh = x.push(1.0);
        for j in 0..4 {
            a.fixed_view_mut::<3, 3>(3 * i, 3 * j)
                .copy_from(&(s * xh[j]));
        }
        b.fixed_rows_mut::<3>(3 * i)
            .copy_from(&(s * c.ray.center()));
    }
    (a, b)
}

pub(super) fn singular_values_sorted(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn condition_number(sv: &[f64]) -> f64 {
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn least_squares_qr(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let cols = a.ncols();
    let qr = a.clone().col_piv_qr();
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let r = r.view((0, 0), (cols, cols));
    let mut x = r.solve_upper_triangular(&qtb.rows(0, cols))?;
    qr.p().inv_permute_rows(&mut x);
    Some(x)
}

fn least_squares_svd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max() / DEGENERATE_CONDITION;
    svd.solve(b, eps).ok()
}

/// Residual RMS of the raw system at `t`, computed per correspondence.
pub(super) fn algebraic_rms(correspondences: &[RayPointCorrespondence], t: &Matrix3x4<f64>) -> f64 {
    let sum: f64 = correspondences
        .iter()
        .map(|c| {
            let y = t * c.global_point.coords();
            c.ray
                .direction()
                .cross(&(y - c.ray.center()))
                .norm_squared()
        })
        .sum();
    (sum / (3 * correspondences.len()) as f64).sqrt()
}

/// Unconstrained least-squares solution of the twelve entries of `T`.
pub fn solve_dlt(
    correspondences: &[RayPointCorrespondence],
) -> Result<(Matrix3x4<f64>, DltDiagnostics), SolverError> {
    check_count(correspondences.len())?;
    let norm = PointNormalization::fit(correspondences);
    let (a, b) = assemble(correspondences, Some(&norm));

    let condition = condition_number(&singular_values_sorted(&a));
    if !(condition <= DEGENERATE_CONDITION) {
        return Err(SolverError::DegenerateConfiguration { condition });
    }
    let x = if condition > SVD_FALLBACK_CONDITION {
        least_squares_svd(&a, &b)
    } else {
        least_squares_qr(&a, &b).or_else(|| least_squares_svd(&a, &b))
    }
    .ok_or(SolverError::DegenerateConfiguration { condition })?;

    let t = norm.denormalize(&Matrix3x4::from_column_slice(x.as_slice()));
    let diagnostics = DltDiagnostics {
        condition_number: condition,
        residual_rms: algebraic_rms(correspondences, &t),
        num_correspondences: correspondences.len(),
    };
    Ok((t, diagnostics))
}

/// Linear estimate `T_DLT`: least squares followed by projection onto Sim(3).
pub fn estimate_pose_dlt(
    correspondences: &[RayPointCorrespondence],
) -> Result<(Sim3Transform, DltDiagnostics), SolverError> {
    let (raw, mut diagnostics) = solve_dlt(correspondences)?;
    let transform = project_to_sim3(&raw)?;
    diagnostics.residual_rms = algebraic_rms(correspondences, &transform.as_matrix());
    Ok((transform, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, Ray};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    fn synthetic(rng: &mut ChaCha8Rng, n: usize) -> (Sim3Transform, Vec<RayPointCorrespondence>) {
        let t = Sim3Transform::new(
            rng.random_range(0.5..2.0),
            exp_so3(&rvec(rng, 1.5)),
            rvec(rng, 5.0),
        )
        .unwrap();
        let corr = (0..n)
            .map(|_| {
                let x = rvec(rng, 10.0);
                let c = rvec(rng, 2.0);
                RayPointCorrespondence::new(Ray::through(c, &t.apply(&x)).unwrap(), &x)
            })
            .collect();
        (t, corr)
    }

    /// Per-element Kronecker product, written independently of `assemble`.
    fn naive_kron(x: &[f64; 4], s: &nalgebra::Matrix3<f64>) -> [[f64; 12]; 3] {
        let mut out = [[0.0; 12]; 3];
        for row in 0..3 {
            for col in 0..12 {
                // (x^T ⊗ S)[row, col] = x[col / 3] * S[row, col % 3]
                out[row][col] = x[col / 3] * s[(row, col % 3)];
            }
        }
        out
    }

    #[test]
    fn kronecker_layout_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, corr) = synthetic(&mut rng, 8);
        let (a, b) = build_dlt_system(&corr).unwrap();
        for (i, c) in corr.iter().enumerate() {
            let x = c.global_point.coords();
            let k = naive_kron(&[x[0], x[1], x[2], x[3]], &skew(c.ray.direction()));
            for row in 0..3 {
                for col in 0..12 {
                    assert_eq!(a[(3 * i + row, col)], k[row][col]);
                }
                let d = c.ray.direction();
                let cc = c.ray.center();
                let expected = [
                    d.y * cc.z - d.z * cc.y,
                    d.z * cc.x - d.x * cc.z,
                    d.x * cc.y - d.y * cc.x,
                ];
                assert!((b[3 * i + row] - expected[row]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blocks_have_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, corr) = synthetic(&mut rng, 10);
        let (a, _) = build_dlt_system(&corr).unwrap();
        for i in 0..corr.len() {
            assert_eq!(a.rows(3 * i, 3).into_owned().rank(1e-9), 2);
        }
    }

    #[test]
    fn true_transform_satisfies_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (t, corr) = synthetic(&mut rng, 12);
            let (a, b) = build_dlt_system(&corr).unwrap();
            let m = t.as_matrix();
            let v = DVector::from_column_slice(m.as_slice());
            assert!((a * v - b).abs().max() < 1e-10);
        }
    }

    #[test]
    fn identity_points_on_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corr: Vec<_> = (0..10)
            .map(|_| {
                let c = rvec(&mut rng, 1.0);
                let ray = Ray::new(rvec(&mut rng, 1.0), c).unwrap();
                RayPointCorrespondence::new(ray, &ray.at(rng.random_range(1.0..10.0)))
            })
            .collect();
        let (a, b) = build_dlt_system(&corr).unwrap();
        let id = Sim3Transform::identity().as_matrix();
        assert!(
            (a * DVector::from_column_slice(id.as_slice()) - b)
                .abs()
                .max()
                < 1e-12
        );
        let (t, _) = estimate_pose_dlt(&corr).unwrap();
        assert!((t.as_matrix() - id).abs().max() < 1e-8);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(30, 12, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let x = least_squares_qr(&a, &b).unwrap();
        let ata = a.transpose() * &a;
        let oracle = ata.cholesky().unwrap().solve(&(a.transpose() * &b));
        assert!((x - &oracle).abs().max() < 1e-10);
        let x = least_squares_svd(&a, &b).unwrap();
        assert!((x - oracle).abs().max() < 1e-10);
    }

    #[test]
    fn recovers_raw_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let (t, corr) = synthetic(&mut rng, 15);
            let (raw, diag) = solve_dlt(&corr).unwrap();
            assert!((raw - t.as_matrix()).abs().max() < 1e-8);
            assert!(diag.residual_rms < 1e-10);
            assert_eq!(diag.num_correspondences, 15);
        }
    }

    #[test]
    fn too_few_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, corr) = synthetic(&mut rng, 5);
        assert_eq!(
            solve_dlt(&corr).unwrap_err(),
            SolverError::TooFewCorrespondences {
                got: 5,
                required: 6
            }
        );
        let x = Vector3::new(1.0, 2.0, 3.0);
        let same: Vec<_> = (0..10)
            .map(|_| {
                let c = rvec(&mut rng, 2.0);
                RayPointCorrespondence::new(Ray::through(c, &x).unwrap(), &x)
            })
            .collect();
        assert!(matches!(
            solve_dlt(&same),
            Err(SolverError::DegenerateConfiguration { .. })
        ));
    }
}
