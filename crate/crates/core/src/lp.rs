//! Two-phase revised simplex for small linear programs.
//!
//! Problems are stated as
//!
//! ```text
//! maximize    c^T x
//! subject to  a_r^T x  (<= | =)  b_r      for every row r
//!             lower_j <= x_j <= upper_j   (bounds may be infinite)
//! ```
//!
//! Internally every variable is shifted or split so that it is non-negative,
//! rows are sign-normalized, and a phase-1 problem over artificial variables
//! finds a starting basis. The basis is LU-factored afresh at each pivot.
//! Entering columns follow Bland's lowest-index rule; the leaving row comes
//! from a two-pass (Harris) ratio test that prefers large pivots among
//! near-ties, which keeps degenerate problems well conditioned.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{check_finite, check_len, Error, Result};

/// Absolute tolerance on primal feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Tolerance on reduced costs.
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Smaller column entries are treated as round-off and never pivoted on.
const PIVOT_TOL: f64 = 1e-9;

/// Slack allowed in the first pass of the ratio test. Basic variables may
/// end up this far below zero.
const RATIO_SLACK: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A maximization problem with row constraints and per-variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LinearProgram {
    /// New problem maximizing `objective . x` with every variable in `[0, inf)`.
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            constraints: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.set_bounds(var, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "linear program has no variables".into(),
            ));
        }
        check_finite("objective", &self.objective)?;
        for c in &self.constraints {
            check_len("constraint row", n, c.coeffs.len())?;
            check_finite("constraint row", &c.coeffs)?;
            check_finite("constraint rhs", &[c.rhs])?;
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan()
                || hi.is_nan()
                || lo == f64::INFINITY
                || hi == f64::NEG_INFINITY
                || lo > hi
            {
                return Err(Error::InvalidArgument(format!(
                    "invalid bounds [{lo}, {hi}] on variable {j}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful only when `status == Optimal`.
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// Indices of constraint rows satisfied with equality at `x`.
    pub basis: Vec<usize>,
}

impl LpSolution {
    fn empty(status: LpStatus, n: usize) -> Self {
        let objective_value = match status {
            LpStatus::Unbounded => f64::INFINITY,
            _ => f64::NAN,
        };
        LpSolution {
            status,
            x: vec![f64::NAN; n],
            objective_value,
            basis: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable is expressed through non-negative columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = shift + y
    Shifted { col: usize, shift: f64 },
    /// x = shift - y
    Mirrored { col: usize, shift: f64 },
    /// x = y+ - y-
    Split { pos: usize, neg: usize },
}

/// Standard-form problem `A y = b, y >= 0` with a current basis.
///
/// Every iteration refactors the basis matrix from `A` itself, so round-off
/// never accumulates across pivots.
struct Simplex {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Simplex {
    fn basis_matrix(&self) -> DMatrix<f64> {
        self.a.select_columns(&self.basis)
    }

    fn factor(&self) -> Result<LU<f64, Dyn, Dyn>> {
        let lu = self.basis_matrix().lu();
        if lu.is_invertible() {
            Ok(lu)
        } else {
            Err(Error::InvalidArgument(
                "simplex basis became singular".into(),
            ))
        }
    }

    fn basic_values(&self, lu: &LU<f64, Dyn, Dyn>) -> Result<DVector<f64>> {
        lu.solve(&self.b)
            .ok_or_else(|| Error::InvalidArgument("simplex basis became singular".into()))
    }

    /// Row `i` of `B^-1 A`, and the multipliers `B^-T e_i` that produce it.
    fn tableau_row(&self, i: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let m = self.basis.len();
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        let z = self
            .basis_matrix()
            .transpose()
            .lu()
            .solve(&e)
            .ok_or_else(|| Error::InvalidArgument("simplex basis became singular".into()))?;
        Ok((self.a.tr_mul(&z), z))
    }

    /// Primal simplex maximizing `cost . y` over the columns allowed by
    /// `eligible`. Entering: lowest eligible index with positive reduced cost.
    /// Leaving: two-pass ratio test that, among rows whose ratio is within the
    /// feasibility tolerance of the minimum, takes the largest pivot (lowest
    /// basis index on ties).
    fn optimize(&mut self, cost: &DVector<f64>, eligible: &[bool]) -> Result<Step> {
        let cols = self.a.ncols();
        for _ in 0..MAX_PIVOTS {
            let lu = self.factor()?;
            let xb = self.basic_values(&lu)?;
            let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| cost[j]));
            let y = self
                .basis_matrix()
                .transpose()
                .lu()
                .solve(&cb)
                .ok_or_else(|| Error::InvalidArgument("simplex basis became singular".into()))?;
            let reduced = cost - self.a.tr_mul(&y);
            let mut in_basis = vec![false; cols];
            for &j in &self.basis {
                in_basis[j] = true;
            }
            let Some(c) =
                (0..cols).find(|&j| eligible[j] && !in_basis[j] && reduced[j] > OPTIMALITY_TOL)
            else {
                return Ok(Step::Optimal);
            };
            let column = lu
                .solve(&self.a.column(c).into_owned())
                .ok_or_else(|| Error::InvalidArgument("simplex basis became singular".into()))?;
            let bound = (0..column.len())
                .filter(|&i| column[i] > PIVOT_TOL)
                .map(|i| (xb[i].max(0.0) + RATIO_SLACK) / column[i])
                .fold(f64::INFINITY, f64::min);
            if bound == f64::INFINITY {
                return Ok(Step::Unbounded);
            }
            let mut leave: Option<usize> = None;
            for i in 0..column.len() {
                if column[i] <= PIVOT_TOL || xb[i].max(0.0) / column[i] > bound {
                    continue;
                }
                leave = match leave {
                    Some(l)
                        if column[l] > column[i]
                            || (column[l] == column[i] && self.basis[l] < self.basis[i]) =>
                    {
                        Some(l)
                    }
                    _ => Some(i),
                };
            }
            let r = leave.expect("ratio bound comes from an eligible row");
            self.basis[r] = c;
        }
        Err(Error::InvalidArgument(
            "simplex pivot limit exceeded".into(),
        ))
    }
}

/// Solves `lp` to a vertex optimum.
///
/// Malformed input is an `Err`; infeasible and unbounded problems are
/// reported through [`LpSolution::status`].
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();

    // Column layout for the non-negative variables.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo.is_finite() {
            maps.push(VarMap::Shifted {
                col: ncols,
                shift: lo,
            });
            if hi.is_finite() {
                bound_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Mirrored {
                col: ncols,
                shift: hi,
            });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }

    // Rows in terms of the y columns: (coeffs, is_equality, rhs).
    let mut rows: Vec<(Vec<f64>, bool, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut coeffs = vec![0.0; ncols];
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shifted { col, shift } => {
                    coeffs[col] += a;
                    rhs -= a * shift;
                }
                VarMap::Mirrored { col, shift } => {
                    coeffs[col] -= a;
                    rhs -= a * shift;
                }
                VarMap::Split { pos, neg } => {
                    coeffs[pos] += a;
                    coeffs[neg] -= a;
                }
            }
        }
        rows.push((coeffs, c.relation == Relation::Eq, rhs));
    }
    for &(col, width) in &bound_rows {
        let mut coeffs = vec![0.0; ncols];
        coeffs[col] = 1.0;
        rows.push((coeffs, false, width));
    }

    let mut cost = vec![0.0; ncols];
    for (j, &cj) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shifted { col, .. } => cost[col] += cj,
            VarMap::Mirrored { col, .. } => cost[col] -= cj,
            VarMap::Split { pos, neg } => {
                cost[pos] += cj;
                cost[neg] -= cj;
            }
        }
    }

    // Slack/surplus and artificial columns.
    let m = rows.len();
    let mut slack_of_row = vec![None; m];
    let mut artificial_of_row = vec![None; m];
    let mut total = ncols;
    for (i, (_, is_eq, rhs)) in rows.iter().enumerate() {
        if !*is_eq {
            slack_of_row[i] = Some(total);
            total += 1;
        }
        if *is_eq || *rhs < 0.0 {
            artificial_of_row[i] = Some(total);
            total += 1;
        }
    }
    let mut a = DMatrix::zeros(m, total);
    let mut b = DVector::zeros(m);
    let mut basis = Vec::with_capacity(m);
    let mut is_artificial = vec![false; total];
    for (i, (coeffs, _, rhs)) in rows.into_iter().enumerate() {
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in coeffs.iter().enumerate() {
            a[(i, j)] = sign * v;
        }
        if let Some(s) = slack_of_row[i] {
            a[(i, s)] = sign;
        }
        b[i] = sign * rhs;
        if let Some(art) = artificial_of_row[i] {
            a[(i, art)] = 1.0;
            is_artificial[art] = true;
            basis.push(art);
        } else {
            basis.push(slack_of_row[i].expect("inequality row has a slack"));
        }
    }
    let mut simplex = Simplex { a, b, basis };

    // Phase 1.
    if is_artificial.iter().any(|&a| a) {
        let phase1_cost = DVector::from_iterator(
            total,
            is_artificial.iter().map(|&a| if a { -1.0 } else { 0.0 }),
        );
        let all = vec![true; total];
        simplex.optimize(&phase1_cost, &all)?;
        let xb = simplex.basic_values(&simplex.factor()?)?;
        let infeasibility: f64 = simplex
            .basis
            .iter()
            .zip(xb.iter())
            .filter(|(&j, _)| is_artificial[j])
            .map(|(_, &v)| v)
            .sum();
        if infeasibility > FEASIBILITY_TOL {
            return Ok(LpSolution::empty(LpStatus::Infeasible, n));
        }
        // Drive remaining (zero-valued) artificials out of the basis.
        let mut i = 0;
        while i < simplex.basis.len() {
            if !is_artificial[simplex.basis[i]] {
                i += 1;
                continue;
            }
            let (row, z) = simplex.tableau_row(i)?;
            let replacement = (0..total)
                .filter(|&j| {
                    !is_artificial[j] && !simplex.basis.contains(&j) && row[j].abs() > 1e-9
                })
                .max_by(|&p, &q| row[p].abs().total_cmp(&row[q].abs()).then(q.cmp(&p)));
            match replacement {
                Some(j) => {
                    simplex.basis[i] = j;
                    i += 1;
                }
                None => {
                    // The rows are dependent; drop one that takes part in the dependency.
                    let r = (0..z.len())
                        .max_by(|&p, &q| z[p].abs().total_cmp(&z[q].abs()).then(q.cmp(&p)))
                        .expect("basis is not empty");
                    simplex.a = simplex.a.clone().remove_row(r);
                    simplex.b = simplex.b.clone().remove_row(r);
                    simplex.basis.remove(i);
                }
            }
        }
    }

    // Phase 2.
    let mut phase2_cost = DVector::zeros(total);
    for (j, &c) in cost.iter().enumerate() {
        phase2_cost[j] = c;
    }
    let eligible: Vec<bool> = is_artificial.iter().map(|&a| !a).collect();
    if let Step::Unbounded = simplex.optimize(&phase2_cost, &eligible)? {
        return Ok(LpSolution::empty(LpStatus::Unbounded, n));
    }

    let to_x = |y: &[f64]| -> Vec<f64> {
        maps.iter()
            .map(|m| match *m {
                VarMap::Shifted { col, shift } => shift + y[col],
                VarMap::Mirrored { col, shift } => shift - y[col],
                VarMap::Split { pos, neg } => y[pos] - y[neg],
            })
            .collect()
    };
    let xb = simplex.basic_values(&simplex.factor()?)?;
    let mut y = vec![0.0; total];
    for (&j, &v) in simplex.basis.iter().zip(xb.iter()) {
        y[j] = v;
    }
    let x = to_x(&y);
    let objective_value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let basis = lp
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let lhs: f64 = c.coeffs.iter().zip(&x).map(|(a, v)| a * v).sum();
            (lhs - c.rhs).abs() <= FEASIBILITY_TOL * (1.0 + c.rhs.abs())
        })
        .map(|(i, _)| i)
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
        basis,
    })
}

/// Largest violation of the constraints and bounds of `lp` at `x`.
pub fn max_violation(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for c in &lp.constraints {
        let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        let v = match c.relation {
            Relation::Le => lhs - c.rhs,
            Relation::Eq => (lhs - c.rhs).abs(),
        };
        worst = worst.max(v);
    }
    for (j, &v) in x.iter().enumerate() {
        worst = worst.max(lp.lower[j] - v).max(v - lp.upper[j]);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_variable() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.add_constraint(vec![1.0], Relation::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective_value, 1.0, epsilon = 1e-12);
        assert_eq!(s.basis, vec![0]);
    }

    #[test]
    fn degenerate_face_returns_vertex() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        lp.add_constraint(vec![1.0, 1.0], Relation::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.objective_value, 1.0, epsilon = 1e-12);
        // a vertex of the optimal face: one coordinate is zero
        assert!(s.x.iter().any(|&v| v.abs() < 1e-12));
        assert!(s.x.iter().any(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.add_constraint(vec![1.0], Relation::Le, -1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.add_constraint(vec![-1.0, 1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_bounded_variables() {
        // maximize -|x - 3| over x in [-inf, 2] -> x = 2
        let mut lp = LinearProgram::maximize(vec![0.0, -1.0]);
        lp.set_bounds(0, f64::NEG_INFINITY, 2.0);
        lp.add_constraint(vec![1.0, -1.0], Relation::Le, 3.0);
        lp.add_constraint(vec![-1.0, -1.0], Relation::Le, -3.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective_value, -1.0, epsilon = 1e-12);

        // maximize x + y with x free, -1 <= y <= 0.5, x + 2y = 1, x <= 4
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        lp.set_free(0).set_bounds(1, -1.0, 0.5);
        lp.add_constraint(vec![1.0, 2.0], Relation::Eq, 1.0);
        lp.add_constraint(vec![1.0, 0.0], Relation::Le, 4.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.x[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], -1.0, epsilon = 1e-12);
        assert!(max_violation(&lp, &s.x) <= 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.add_constraint(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_constraint(vec![2.0, 2.0], Relation::Eq, 2.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.objective_value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_malformed() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.add_constraint(vec![1.0, 2.0], Relation::Le, 1.0);
        assert!(solve_lp(&lp).is_err());
        assert!(solve_lp(&LinearProgram::maximize(vec![])).is_err());
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.set_bounds(0, 1.0, 0.0);
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn deterministic() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0, 1.0]);
        lp.add_constraint(vec![1.0, 1.0, 0.0], Relation::Le, 1.0);
        lp.add_constraint(vec![0.0, 1.0, 1.0], Relation::Le, 1.0);
        lp.add_constraint(vec![1.0, 0.0, 1.0], Relation::Le, 1.0);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.objective_value, 1.5, epsilon = 1e-12);
    }
}
