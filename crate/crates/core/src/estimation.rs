//! The bound, protocol and dual protocol problems for estimating `q = alpha . theta`
//! from sensors with gradient matrix `G`, plus the unentangled baseline.
//!
//! All three problems are linear programs:
//!
//! * bound: `u = 1 / min ||G beta||_1` subject to `alpha . beta = 1`
//! * protocol: `u' = min ||w||_inf` subject to `G^T w = alpha`
//! * dual: `u'' = max alpha . v` subject to `||G v||_1 <= 1`
//!
//! and `u = u' = u''`. The optimal MSE of the entangled protocol is `u'^2 / t^2`.
//!
//! The bound and dual problems usually have a whole face of optimal points.
//! Those solvers run a second LP that pins the optimal value and picks the
//! point of smallest l1 norm, so the returned vectors do not depend on
//! pivoting accidents. If rounding makes the pinned LP infeasible the vertex
//! of the first LP is returned instead.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_finite, check_len, Error, Result};
use crate::field::GradientMatrix;
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};

/// Bound-problem optima at or below this are treated as zero (infinite precision).
pub const ZERO_OPTIMUM_TOL: f64 = 1e-12;
/// Relative residual below which `G^T w = alpha` counts as consistent.
pub const CONSISTENCY_TOL: f64 = 1e-8;

/// A target gradient `alpha` together with the sensor gradient matrix `G` (d x k).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    g: GradientMatrix,
    alpha: DVector<f64>,
}

impl EstimationProblem {
    pub fn new(g: GradientMatrix, alpha: DVector<f64>) -> Result<Self> {
        check_len("alpha", g.params(), alpha.len())?;
        check_finite("alpha", alpha.as_slice())?;
        check_finite("gradient matrix", g.entries.as_slice())?;
        if g.sensors() == 0 || g.params() == 0 {
            return Err(Error::InvalidArgument("gradient matrix is empty".into()));
        }
        if alpha.iter().all(|&a| a == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(EstimationProblem { g, alpha })
    }

    /// Convenience constructor from row-major `G` and `alpha`.
    pub fn from_rows(rows: &[Vec<f64>], alpha: &[f64]) -> Result<Self> {
        Self::new(
            GradientMatrix::from_rows(rows)?,
            DVector::from_column_slice(alpha),
        )
    }

    pub fn g(&self) -> &GradientMatrix {
        &self.g
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g.entries
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn sensors(&self) -> usize {
        self.g.sensors()
    }

    pub fn params(&self) -> usize {
        self.g.params()
    }

    /// Same sensors, target gradient multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.g.clone(), &self.alpha * c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSolution {
    pub u: f64,
    pub beta0: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub u_prime: f64,
    pub w0: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub u_dprime: f64,
    pub v0: DVector<f64>,
}

/// Variables `[beta (k, free), s (d, >= 0)]`, rows `+-(G beta)_i - s_i <= 0`.
fn l1_epigraph_rows(lp: &mut LinearProgram, g: &DMatrix<f64>) {
    let (d, k) = g.shape();
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; lp.num_vars()];
            for m in 0..k {
                row[m] = sign * g[(i, m)];
            }
            row[k + i] = -1.0;
            lp.add_constraint(row, Relation::Le, 0.0);
        }
    }
}

/// Adds `r_j >= |x_j|` rows for the first `n` variables, with `r` at `offset`.
fn abs_rows(lp: &mut LinearProgram, n: usize, offset: usize) {
    for j in 0..n {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; lp.num_vars()];
            row[j] = sign;
            row[offset + j] = -1.0;
            lp.add_constraint(row, Relation::Le, 0.0);
        }
    }
}

/// Relative slack tried when the exactly pinned face LP is numerically empty.
const FACE_SLACK: f64 = 1e-12;
/// Relative tolerance for accepting a tie-break solution.
const FACE_CHECK_TOL: f64 = 1e-9;

/// Solves the face LP built by `face` at the exact level and then at a
/// slightly relaxed one, returning the first solution `accept` agrees with.
fn pinned_face(
    face: impl Fn(f64) -> LinearProgram,
    levels: [f64; 2],
    accept: impl Fn(&[f64]) -> bool,
) -> Result<Option<Vec<f64>>> {
    for level in levels {
        let s = solve_lp(&face(level))?;
        if s.is_optimal() && accept(&s.x) {
            return Ok(Some(s.x));
        }
    }
    Ok(None)
}

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Solves the bound problem, returning `u` and an optimal `beta0`.
pub fn solve_bound(p: &EstimationProblem) -> Result<BoundSolution> {
    let g = p.matrix();
    let (d, k) = g.shape();

    // maximize -sum s
    let mut objective = vec![0.0; k + d];
    objective[k..].iter_mut().for_each(|c| *c = -1.0);
    let mut lp = LinearProgram::maximize(objective);
    for m in 0..k {
        lp.set_free(m);
    }
    l1_epigraph_rows(&mut lp, g);
    let mut normalization = vec![0.0; k + d];
    normalization[..k].copy_from_slice(p.alpha.as_slice());
    lp.add_constraint(normalization.clone(), Relation::Eq, 1.0);

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let optimum = -sol.objective_value;
    if optimum <= ZERO_OPTIMUM_TOL {
        return Err(Error::UnboundedPrecision { optimum });
    }

    // Smallest ||beta||_1 on the optimal face.
    normalization.resize(2 * k + d, 0.0);
    let face = |bound: f64| {
        let mut objective = vec![0.0; 2 * k + d];
        objective[k + d..].iter_mut().for_each(|c| *c = -1.0);
        let mut face = LinearProgram::maximize(objective);
        for m in 0..k {
            face.set_free(m);
        }
        l1_epigraph_rows(&mut face, g);
        abs_rows(&mut face, k, k + d);
        face.add_constraint(normalization.clone(), Relation::Eq, 1.0);
        let mut level = vec![0.0; 2 * k + d];
        level[k..k + d].iter_mut().for_each(|c| *c = 1.0);
        face.add_constraint(level, Relation::Le, bound);
        face
    };
    let accept = |x: &[f64]| {
        let beta = DVector::from_column_slice(&x[..k]);
        (p.alpha.dot(&beta) - 1.0).abs() <= FACE_CHECK_TOL
            && l1(&(g * &beta)) <= optimum * (1.0 + FACE_CHECK_TOL)
    };
    let beta_raw =
        pinned_face(face, [optimum, optimum * (1.0 + FACE_SLACK)], accept)?.unwrap_or(sol.x);
    let beta0 = DVector::from_column_slice(&beta_raw[..k]);
    Ok(BoundSolution {
        u: 1.0 / optimum,
        beta0,
    })
}

/// Solves the protocol problem, returning `u'` and optimal weights `w0`.
pub fn solve_protocol(p: &EstimationProblem) -> Result<WeightSolution> {
    let g = p.matrix();
    let (d, k) = g.shape();

    // variables [w (d, free), s (>= 0)], maximize -s
    let mut objective = vec![0.0; d + 1];
    objective[d] = -1.0;
    let mut lp = LinearProgram::maximize(objective);
    for i in 0..d {
        lp.set_free(i);
    }
    for m in 0..k {
        let mut row = vec![0.0; d + 1];
        for i in 0..d {
            row[i] = g[(i, m)];
        }
        lp.add_constraint(row, Relation::Eq, p.alpha[m]);
    }
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; d + 1];
            row[i] = sign;
            row[d] = -1.0;
            lp.add_constraint(row, Relation::Le, 0.0);
        }
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::InconsistentConstraint {
                residual: consistency_residual(g, &p.alpha),
            })
        }
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let w0 = DVector::from_column_slice(&sol.x[..d]);
    Ok(WeightSolution {
        u_prime: -sol.objective_value,
        w0,
    })
}

/// Solves the dual protocol problem, returning `u''` and an optimal `v0`.
pub fn solve_dual(p: &EstimationProblem) -> Result<DualSolution> {
    let g = p.matrix();
    let (d, k) = g.shape();

    // variables [v (k, free), t (d, >= 0)], maximize alpha . v
    let mut objective = vec![0.0; k + d];
    objective[..k].copy_from_slice(p.alpha.as_slice());
    let mut lp = LinearProgram::maximize(objective.clone());
    for m in 0..k {
        lp.set_free(m);
    }
    l1_epigraph_rows(&mut lp, g);
    let mut budget = vec![0.0; k + d];
    budget[k..].iter_mut().for_each(|c| *c = 1.0);
    lp.add_constraint(budget.clone(), Relation::Le, 1.0);

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let optimum = sol.objective_value;

    // Smallest ||v||_1 among maximizers.
    budget.resize(2 * k + d, 0.0);
    let mut level: Vec<f64> = objective.iter().map(|c| -c).collect();
    level.resize(2 * k + d, 0.0);
    let face = |bound: f64| {
        let mut face_objective = vec![0.0; 2 * k + d];
        face_objective[k + d..].iter_mut().for_each(|c| *c = -1.0);
        let mut face = LinearProgram::maximize(face_objective);
        for m in 0..k {
            face.set_free(m);
        }
        l1_epigraph_rows(&mut face, g);
        abs_rows(&mut face, k, k + d);
        face.add_constraint(budget.clone(), Relation::Le, 1.0);
        face.add_constraint(level.clone(), Relation::Le, bound);
        face
    };
    let accept = |x: &[f64]| {
        let v = DVector::from_column_slice(&x[..k]);
        l1(&(g * &v)) <= 1.0 + FACE_CHECK_TOL
            && p.alpha.dot(&v) >= optimum - FACE_CHECK_TOL * optimum.abs().max(1.0)
    };
    let relaxed = -optimum + FACE_SLACK * optimum.abs().max(f64::MIN_POSITIVE);
    let v_raw = pinned_face(face, [-optimum, relaxed], accept)?.unwrap_or(sol.x);
    let v0 = DVector::from_column_slice(&v_raw[..k]);
    Ok(DualSolution {
        u_dprime: optimum,
        v0,
    })
}

/// Recovers a bound-problem optimizer from the dual solution as `v0 / u'`.
pub fn beta_from_dual(dual: &DualSolution, u_prime: f64) -> DVector<f64> {
    &dual.v0 / u_prime
}

/// Minimum Euclidean-norm solution of `G^T w = alpha`, i.e. the optimal weights
/// when each sensor is read out independently, and its MSE coefficient `||w||_2^2`.
pub fn unentangled_weights(p: &EstimationProblem) -> Result<(DVector<f64>, f64)> {
    let w = min_norm_solution(&p.matrix().transpose(), p.alpha())?;
    let mse_coeff = w.norm_squared();
    Ok((w, mse_coeff))
}

/// Minimum-norm least-squares solution of `a x = b`; errors if the system is inconsistent.
pub(crate) fn min_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = rank_tolerance(&svd.singular_values);
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))?;
    let residual = (a * &x - b).norm();
    if residual > CONSISTENCY_TOL * b.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::InconsistentConstraint { residual });
    }
    Ok(x)
}

fn rank_tolerance(singular_values: &DVector<f64>) -> f64 {
    1e-10 * singular_values.amax().max(f64::MIN_POSITIVE)
}

fn consistency_residual(g: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    let gt = g.transpose();
    let svd = gt.clone().svd(true, true);
    let eps = rank_tolerance(&svd.singular_values);
    match svd.solve(alpha, eps) {
        Ok(w) => (gt * w - alpha).norm(),
        Err(_) => f64::NAN,
    }
}

/// Numerical rank of `G` (singular values above `1e-10` times the largest).
pub fn gradient_rank(g: &GradientMatrix) -> usize {
    let sv = g.entries.singular_values();
    let tol = rank_tolerance(&sv);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Smallest singular value of `G` (zero when `d < k`).
pub fn min_singular_value(g: &GradientMatrix) -> f64 {
    if g.sensors() < g.params() {
        return 0.0;
    }
    g.entries.singular_values().min()
}

/// Whether `alpha` lies in the row space of `G`, so that `q` can be estimated.
pub fn check_identifiability(g: &GradientMatrix, alpha: &DVector<f64>) -> bool {
    check_identifiability_with(g, alpha, false)
}

/// As [`check_identifiability`]; with `require_full_rank` the stronger
/// condition `rank G = k` (every parameter resolvable) is demanded as well.
pub fn check_identifiability_with(
    g: &GradientMatrix,
    alpha: &DVector<f64>,
    require_full_rank: bool,
) -> bool {
    if alpha.len() != g.params() || g.sensors() == 0 {
        return false;
    }
    if require_full_rank && gradient_rank(g) < g.params() {
        return false;
    }
    let residual = consistency_residual(&g.entries, alpha);
    residual.is_finite() && residual <= CONSISTENCY_TOL * alpha.norm()
}

/// The saturable MSE lower bound `u^2 / t^2`.
pub fn mse_lower_bound(u: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time must be positive, got {t}"
        )));
    }
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "u must be positive, got {u}"
        )));
    }
    Ok(u * u / (t * t))
}

/// Draws a well-conditioned instance with `k in [1, max_k]`, `d in [k, max_d]`
/// and entries uniform in `[-2, 2]`, resampling until `sigma_min(G) >= 1e-3`.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    max_d: usize,
    max_k: usize,
) -> EstimationProblem {
    assert!(max_k >= 1 && max_d >= max_k, "need 1 <= max_k <= max_d");
    loop {
        let k = rng.random_range(1..=max_k);
        let d = rng.random_range(k..=max_d);
        if let Some(p) = random_instance_sized(rng, d, k) {
            return p;
        }
    }
}

/// One draw of a `d x k` instance; `None` if it fails the conditioning filter.
pub fn random_instance_sized<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    k: usize,
) -> Option<EstimationProblem> {
    let g = DMatrix::from_fn(d, k, |_, _| rng.random_range(-2.0..=2.0));
    let alpha = DVector::from_fn(k, |_, _| rng.random_range(-2.0..=2.0));
    let g = GradientMatrix::from_matrix(g);
    if min_singular_value(&g) < 1e-3 || !check_identifiability(&g, &alpha) {
        return None;
    }
    EstimationProblem::new(g, alpha).ok()
}

/// `||G beta||_1`, the seminorm of the generator for a given `beta`.
pub fn generator_seminorm(g: &GradientMatrix, beta: &DVector<f64>) -> f64 {
    l1(&(&g.entries * beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> EstimationProblem {
        EstimationProblem::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            &[1.0, 0.0],
        )
        .unwrap()
    }

    fn identity(k: usize) -> EstimationProblem {
        let mut alpha = vec![0.0; k];
        alpha[0] = 1.0;
        EstimationProblem::new(
            GradientMatrix::from_matrix(DMatrix::identity(k, k)),
            DVector::from_vec(alpha),
        )
        .unwrap()
    }

    fn assert_vec(v: &DVector<f64>, expected: &[f64], eps: f64) {
        assert_eq!(v.len(), expected.len());
        for (a, b) in v.iter().zip(expected) {
            assert_abs_diff_eq!(*a, *b, epsilon = eps);
        }
    }

    #[test]
    fn toy_values() {
        let p = toy();
        let b = solve_bound(&p).unwrap();
        assert_abs_diff_eq!(b.u, 0.5, epsilon = 1e-12);
        assert_vec(&b.beta0, &[1.0, 0.0], 1e-12);

        let w = solve_protocol(&p).unwrap();
        assert_abs_diff_eq!(w.u_prime, 0.5, epsilon = 1e-12);
        assert_vec(&w.w0, &[0.5, -0.5, 0.5], 1e-12);

        let v = solve_dual(&p).unwrap();
        assert_abs_diff_eq!(v.u_dprime, 0.5, epsilon = 1e-12);
        assert_vec(&v.v0, &[0.5, 0.0], 1e-12);
        assert_vec(&beta_from_dual(&v, w.u_prime), &[1.0, 0.0], 1e-12);

        let (w2, c) = unentangled_weights(&p).unwrap();
        assert_vec(&w2, &[2.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0], 1e-12);
        assert_abs_diff_eq!(c, 2.0 / 3.0, epsilon = 1e-12);
        assert!(w.u_prime * w.u_prime < c);
    }

    #[test]
    fn identity_values() {
        for k in 1..=4 {
            let p = identity(k);
            let mut e1 = vec![0.0; k];
            e1[0] = 1.0;
            let b = solve_bound(&p).unwrap();
            assert_abs_diff_eq!(b.u, 1.0, epsilon = 1e-12);
            assert_vec(&b.beta0, &e1, 1e-12);
            let w = solve_protocol(&p).unwrap();
            assert_abs_diff_eq!(w.u_prime, 1.0, epsilon = 1e-12);
            assert_vec(&w.w0, &e1, 1e-12);
            let v = solve_dual(&p).unwrap();
            assert_vec(&v.v0, &e1, 1e-12);
            let (w2, c) = unentangled_weights(&p).unwrap();
            assert_vec(&w2, &e1, 1e-12);
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scaled_target() {
        let p = toy().scaled(2.0).unwrap();
        let w = solve_protocol(&p).unwrap();
        assert_abs_diff_eq!(w.u_prime, 1.0, epsilon = 1e-12);
        assert_vec(&w.w0, &[1.0, -1.0, 1.0], 1e-12);
    }

    #[test]
    fn non_estimable_instances() {
        // single sensor sees only theta_1, target is theta_2
        let p = EstimationProblem::from_rows(&[vec![1.0, 0.0]], &[0.0, 1.0]).unwrap();
        assert!(!check_identifiability(p.g(), p.alpha()));
        assert!(matches!(
            solve_bound(&p),
            Err(Error::UnboundedPrecision { .. })
        ));
        assert!(matches!(
            solve_protocol(&p),
            Err(Error::InconsistentConstraint { .. })
        ));
        assert!(matches!(solve_dual(&p), Err(Error::Unbounded)));
        assert!(matches!(
            unentangled_weights(&p),
            Err(Error::InconsistentConstraint { .. })
        ));
    }

    #[test]
    fn identifiability_flags() {
        let p = toy();
        assert!(check_identifiability(p.g(), p.alpha()));
        assert!(check_identifiability_with(p.g(), p.alpha(), true));
        // rank-deficient G, alpha in its row space
        let g = GradientMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let a = DVector::from_vec(vec![1.0, 1.0]);
        assert!(check_identifiability(&g, &a));
        assert!(!check_identifiability_with(&g, &a, true));
        assert_eq!(gradient_rank(&g), 1);
        // full rank: every alpha
        let g = GradientMatrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        assert!(check_identifiability(
            &g,
            &DVector::from_vec(vec![0.3, -7.0])
        ));
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(matches!(
            EstimationProblem::from_rows(&[vec![1.0, 0.0]], &[0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            EstimationProblem::from_rows(&[vec![1.0, 0.0]], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lower_bound() {
        assert_abs_diff_eq!(mse_lower_bound(0.5, 1.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(mse_lower_bound(1.0, 10.0).unwrap(), 0.01, epsilon = 1e-15);
        assert!(mse_lower_bound(1.0, 0.0).is_err());
        assert!(mse_lower_bound(1.0, -1.0).is_err());
    }

    #[test]
    fn bound_solution_certificates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let p = random_instance(&mut rng, 8, 4);
            let b = solve_bound(&p).unwrap();
            assert_abs_diff_eq!(p.alpha().dot(&b.beta0), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(
                b.u,
                1.0 / generator_seminorm(p.g(), &b.beta0),
                epsilon = 1e-9
            );
            let w = solve_protocol(&p).unwrap();
            let res = (p.matrix().transpose() * &w.w0 - p.alpha()).amax();
            assert!(res <= 1e-9);
            assert_abs_diff_eq!(w.w0.amax(), w.u_prime, epsilon = 1e-9);
            let v = solve_dual(&p).unwrap();
            assert!(generator_seminorm(p.g(), &v.v0) <= 1.0 + 1e-9);
            assert_abs_diff_eq!(p.alpha().dot(&v.v0), v.u_dprime, epsilon = 1e-9);
        }
    }
}
