//! Levenberg-Marquardt over problems whose residuals are 3-vectors, with an
//! optional 3-parameter point block per residual. Point blocks are eliminated
//! by a Schur complement when there are many of them.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use super::RefineError;

/// Point-block count above which the reduced (Schur) system is solved.
pub const SCHUR_POINT_THRESHOLD: usize = 200;

const MAX_DAMPING: f64 = 1e32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let ok = self.max_iterations >= 1
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 1.0
            && self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RefineError::InvalidProblem(format!(
                "invalid LM configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    /// No damping level produced a cost decrease.
    Stalled,
}

/// One linearized 3-vector residual.
pub(crate) struct ResidualBlock {
    pub residual: Vector3<f64>,
    /// Jacobian with respect to all dense parameters (3 x dense_dim).
    pub dense: Matrix3xX<f64>,
    /// Point-block index and 3x3 Jacobian, if the residual touches a point.
    pub point: Option<(usize, Matrix3<f64>)>,
}

pub(crate) trait LmProblem {
    type State: Clone;

    fn dense_dim(&self) -> usize;
    fn num_point_blocks(&self) -> usize;
    fn residuals(&self, state: &Self::State) -> Result<Vec<Vector3<f64>>, RefineError>;
    fn linearize(&self, state: &Self::State) -> Result<Vec<ResidualBlock>, RefineError>;
    /// Applies `delta` laid out as `[dense | point_0 | point_1 | ...]`.
    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;

    fn total_dim(&self) -> usize {
        self.dense_dim() + 3 * self.num_point_blocks()
    }
}

pub(crate) struct LmOutcome<S> {
    pub state: S,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

pub(crate) fn squared_cost(residuals: &[Vector3<f64>]) -> f64 {
    residuals.iter().map(|r| r.norm_squared()).sum()
}

/// Normal equations split into dense and point parts.
struct NormalEquations {
    h_dd: DMatrix<f64>,
    g_d: DVector<f64>,
    /// Per point block: coupling `J_d^T J_p` (dense_dim x 3).
    w: Vec<DMatrix<f64>>,
    v: Vec<Matrix3<f64>>,
    g_p: Vec<Vector3<f64>>,
}

impl NormalEquations {
    fn build(dense_dim: usize, num_points: usize, blocks: &[ResidualBlock]) -> Self {
        let mut ne = Self {
            h_dd: DMatrix::zeros(dense_dim, dense_dim),
            g_d: DVector::zeros(dense_dim),
            w: vec![DMatrix::zeros(dense_dim, 3); num_points],
            v: vec![Matrix3::zeros(); num_points],
            g_p: vec![Vector3::zeros(); num_points],
        };
        for b in blocks {
            if dense_dim > 0 {
                let jt = b.dense.transpose();
                ne.h_dd += &jt * &b.dense;
                ne.g_d += &jt * b.residual;
            }
            if let Some((k, jp)) = &b.point {
                ne.v[*k] += jp.transpose() * jp;
                ne.g_p[*k] += jp.transpose() * b.residual;
                if dense_dim > 0 {
                    ne.w[*k] += b.dense.transpose() * jp;
                }
            }
        }
        ne
    }

    fn gradient_inf_norm(&self) -> f64 {
        let gd = self.g_d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.g_p
            .iter()
            .flat_map(|g| g.iter())
            .fold(gd, |m, x| m.max(x.abs()))
    }

    fn damping_floor(&self) -> f64 {
        let dmax = (0..self.h_dd.nrows())
            .map(|i| self.h_dd[(i, i)])
            .chain(self.v.iter().flat_map(|v| (0..3).map(move |i| v[(i, i)])))
            .fold(0.0f64, f64::max);
        1e-12 * dmax.max(1e-12)
    }

    fn damped_dense(&self, lambda: f64, floor: f64) -> DMatrix<f64> {
        let mut a = self.h_dd.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda * self.h_dd[(i, i)].max(floor);
        }
        a
    }

    fn damped_point(&self, k: usize, lambda: f64, floor: f64) -> Matrix3<f64> {
        let mut v = self.v[k];
        for i in 0..3 {
            v[(i, i)] += lambda * self.v[k][(i, i)].max(floor);
        }
        v
    }

    /// Solves the damped system for the full step, eliminating points.
    fn solve_schur(&self, lambda: f64) -> Option<DVector<f64>> {
        let floor = self.damping_floor();
        let d = self.h_dd.nrows();
        let np = self.v.len();
        let mut s = self.damped_dense(lambda, floor);
        let mut rhs = -self.g_d.clone();
        let mut v_inv = Vec::with_capacity(np);
        for k in 0..np {
            let vi = self.damped_point(k, lambda, floor).try_inverse()?;
            if d > 0 {
                let wv = &self.w[k] * vi;
                s -= &wv * self.w[k].transpose();
                rhs += &wv * self.g_p[k];
            }
            v_inv.push(vi);
        }
        let delta_d = if d > 0 {
            s.cholesky()?.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let mut delta = DVector::zeros(d + 3 * np);
        delta.rows_mut(0, d).copy_from(&delta_d);
        for k in 0..np {
            let coupled = if d > 0 {
                self.w[k].transpose() * &delta_d
            } else {
                DVector::zeros(3)
            };
            let dp = v_inv[k] * (-self.g_p[k] - Vector3::from_column_slice(coupled.as_slice()));
            delta.fixed_rows_mut::<3>(d + 3 * k).copy_from(&dp);
        }
        Some(delta)
    }

    /// Solves the damped system as one dense matrix.
    fn solve_dense(&self, lambda: f64) -> Option<DVector<f64>> {
        let floor = self.damping_floor();
        let d = self.h_dd.nrows();
        let np = self.v.len();
        let n = d + 3 * np;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (d, d))
            .copy_from(&self.damped_dense(lambda, floor));
        let mut g = DVector::zeros(n);
        g.rows_mut(0, d).copy_from(&self.g_d);
        for k in 0..np {
            let o = d + 3 * k;
            a.fixed_view_mut::<3, 3>(o, o)
                .copy_from(&self.damped_point(k, lambda, floor));
            if d > 0 {
                a.view_mut((0, o), (d, 3)).copy_from(&self.w[k]);
                a.view_mut((o, 0), (3, d)).copy_from(&self.w[k].transpose());
            }
            g.fixed_rows_mut::<3>(o).copy_from(&self.g_p[k]);
        }
        Some(a.cholesky()?.solve(&(-g)))
    }
}

pub(crate) fn minimize<P: LmProblem>(
    problem: &P,
    initial: P::State,
    config: &LmConfig,
) -> Result<LmOutcome<P::State>, RefineError> {
    minimize_with(
        problem,
        initial,
        config,
        problem.num_point_blocks() > SCHUR_POINT_THRESHOLD,
    )
}

pub(crate) fn minimize_with<P: LmProblem>(
    problem: &P,
    initial: P::State,
    config: &LmConfig,
    use_schur: bool,
) -> Result<LmOutcome<P::State>, RefineError> {
    config.validate()?;
    let mut state = initial;
    let mut cost = squared_cost(&problem.residuals(&state)?);
    if !cost.is_finite() {
        return Err(RefineError::NumericalFailure(
            "initial cost is not finite".into(),
        ));
    }
    let mut history = vec![cost];
    let mut lambda = config.initial_damping;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < config.max_iterations {
        iterations += 1;
        let blocks = problem.linearize(&state)?;
        let ne = NormalEquations::build(problem.dense_dim(), problem.num_point_blocks(), &blocks);
        if ne.gradient_inf_norm() < config.gradient_tolerance {
            termination = Termination::Gradient;
            break;
        }
        let mut solved_once = false;
        loop {
            let step = if use_schur {
                ne.solve_schur(lambda)
            } else {
                ne.solve_dense(lambda)
            };
            match step {
                Some(delta) if delta.iter().all(|x| x.is_finite()) => {
                    solved_once = true;
                    if delta.norm() < config.step_tolerance {
                        termination = Termination::Step;
                        break 'outer;
                    }
                    let candidate = problem.retract(&state, &delta);
                    let new_cost = problem
                        .residuals(&candidate)
                        .map(|r| squared_cost(&r))
                        .unwrap_or(f64::INFINITY);
                    if new_cost < cost {
                        state = candidate;
                        cost = new_cost;
                        history.push(cost);
                        lambda = (lambda / config.damping_down).max(1e-20);
                        break;
                    }
                }
                _ => {}
            }
            lambda *= config.damping_up;
            if lambda > MAX_DAMPING {
                if !solved_once {
                    return Err(RefineError::NumericalFailure(
                        "normal equations singular at maximum damping".into(),
                    ));
                }
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }

    Ok(LmOutcome {
        state,
        iterations,
        termination,
        cost_history: history,
    })
}

/// Stacked analytic Jacobian (3 rows per residual, `total_dim` columns).
pub(crate) fn analytic_jacobian<P: LmProblem>(
    problem: &P,
    state: &P::State,
) -> Result<DMatrix<f64>, RefineError> {
    let blocks = problem.linearize(state)?;
    let d = problem.dense_dim();
    let mut j = DMatrix::zeros(3 * blocks.len(), problem.total_dim());
    for (i, b) in blocks.iter().enumerate() {
        if d > 0 {
            j.view_mut((3 * i, 0), (3, d)).copy_from(&b.dense);
        }
        if let Some((k, jp)) = &b.point {
            j.fixed_view_mut::<3, 3>(3 * i, d + 3 * k).copy_from(jp);
        }
    }
    Ok(j)
}

/// Central finite differences through the problem's own retraction.
pub(crate) fn numeric_jacobian<P: LmProblem>(
    problem: &P,
    state: &P::State,
    h: f64,
) -> Result<DMatrix<f64>, RefineError> {
    let n = problem.total_dim();
    let base = problem.residuals(state)?;
    let mut j = DMatrix::zeros(3 * base.len(), n);
    for col in 0..n {
        let mut delta = DVector::zeros(n);
        delta[col] = h;
        let plus = problem.residuals(&problem.retract(state, &delta))?;
        delta[col] = -h;
        let minus = problem.residuals(&problem.retract(state, &delta))?;
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            let d = (p - m) / (2.0 * h);
            j.fixed_view_mut::<3, 1>(3 * i, col).copy_from(&d);
        }
    }
    Ok(j)
}

/// Analytic and finite-difference Jacobians evaluated at the same state.
#[derive(Debug, Clone)]
pub struct JacobianComparison {
    pub analytic: DMatrix<f64>,
    pub numeric: DMatrix<f64>,
}

impl JacobianComparison {
    /// Largest column-relative discrepancy: for every column, the max absolute
    /// difference divided by the column's largest finite-difference entry.
    pub fn max_relative_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.numeric.ncols() {
            let scale = self
                .numeric
                .column(c)
                .amax()
                .max(self.analytic.column(c).amax());
            let diff = (self.analytic.column(c) - self.numeric.column(c)).amax();
            let err = if scale > 1e-9 { diff / scale } else { diff };
            worst = worst.max(err);
        }
        worst
    }
}

pub(crate) fn compare_jacobians<P: LmProblem>(
    problem: &P,
    state: &P::State,
    h: f64,
) -> Result<JacobianComparison, RefineError> {
    Ok(JacobianComparison {
        analytic: analytic_jacobian(problem, state)?,
        numeric: numeric_jacobian(problem, state, h)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fit points p_k to targets with a shared offset: r = p_k + o - target_k.
    struct Toy {
        targets: Vec<Vector3<f64>>,
        anchor: Vector3<f64>,
    }

    #[derive(Clone)]
    struct ToyState {
        offset: Vector3<f64>,
        points: Vec<Vector3<f64>>,
    }

    impl LmProblem for Toy {
        type State = ToyState;
        fn dense_dim(&self) -> usize {
            3
        }
        fn num_point_blocks(&self) -> usize {
            self.targets.len()
        }
        fn residuals(&self, s: &ToyState) -> Result<Vec<Vector3<f64>>, RefineError> {
            let mut r: Vec<_> = s
                .points
                .iter()
                .zip(&self.targets)
                .map(|(p, t)| p + s.offset - t)
                .collect();
            r.push(s.offset - self.anchor);
            for p in &s.points {
                r.push(p.map(|x| x * x) * 0.1);
            }
            Ok(r)
        }
        fn linearize(&self, s: &ToyState) -> Result<Vec<ResidualBlock>, RefineError> {
            let r = self.residuals(s)?;
            let n = self.targets.len();
            let mut out = Vec::new();
            for k in 0..n {
                out.push(ResidualBlock {
                    residual: r[k],
                    dense: Matrix3xX::from_column_slice(Matrix3::<f64>::identity().as_slice()),
                    point: Some((k, Matrix3::identity())),
                });
            }
            out.push(ResidualBlock {
                residual: r[n],
                dense: Matrix3xX::from_column_slice(Matrix3::<f64>::identity().as_slice()),
                point: None,
            });
            for k in 0..n {
                out.push(ResidualBlock {
                    residual: r[n + 1 + k],
                    dense: Matrix3xX::zeros(3),
                    point: Some((k, Matrix3::from_diagonal(&(s.points[k] * 0.2)))),
                });
            }
            Ok(out)
        }
        fn retract(&self, s: &ToyState, d: &DVector<f64>) -> ToyState {
            let mut out = s.clone();
            out.offset += d.fixed_rows::<3>(0);
            for (k, p) in out.points.iter_mut().enumerate() {
                *p += d.fixed_rows::<3>(3 + 3 * k);
            }
            out
        }
    }

    fn toy() -> (Toy, ToyState) {
        let targets: Vec<_> = (0..6)
            .map(|i| Vector3::new(i as f64, 1.0 - i as f64, 0.5 * i as f64))
            .collect();
        let problem = Toy {
            targets,
            anchor: Vector3::new(0.3, -0.2, 0.1),
        };
        let state = ToyState {
            offset: Vector3::zeros(),
            points: vec![Vector3::new(1.0, 1.0, 1.0); 6],
        };
        (problem, state)
    }

    #[test]
    fn schur_and_dense_steps_agree() {
        let (problem, state) = toy();
        let blocks = problem.linearize(&state).unwrap();
        let ne = NormalEquations::build(3, 6, &blocks);
        for lambda in [1e-6, 1e-3, 1.0, 100.0] {
            let a = ne.solve_dense(lambda).unwrap();
            let b = ne.solve_schur(lambda).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn cost_never_increases() {
        let (problem, state) = toy();
        let out = minimize(&problem, state, &LmConfig::default()).unwrap();
        assert!(out.cost_history.last() <= out.cost_history.first());
        for w in out.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn toy_jacobian_matches_differences() {
        let (problem, state) = toy();
        let cmp = compare_jacobians(&problem, &state, 1e-6).unwrap();
        assert!(cmp.max_relative_error() < 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        let (problem, state) = toy();
        let cfg = LmConfig {
            damping_up: 1.0,
            ..Default::default()
        };
        assert!(minimize(&problem, state, &cfg).is_err());
    }
}
