//! Reparametrization `theta -> (q, q_2, ..., q_k)` with `q = alpha . theta`, and
//! the corresponding transformation of Fisher matrices.
//!
//! The Jacobian `J` has rows `alpha_n` with `alpha_1 = alpha`; its inverse has
//! columns `beta_n` with `alpha_n . beta_m = delta_nm`. After moving the
//! largest-magnitude component `a_1` of `alpha` to the front, the remaining
//! rows are `(0, e_n)` and
//!
//! ```text
//! beta_1 = (1/a_1, 0, ..., 0),   beta_n = (-a_n / a_1, e_n).
//! ```
//!
//! Information about `q` is independent of the nuisance directions exactly when
//! the first row of `(J^-1)^T F J^-1` vanishes off the diagonal, which holds for
//! any rank-one `F` proportional to `alpha alpha^T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, check_len, Error, Result};
use crate::field::GradientMatrix;

/// Largest tolerated `|F - F^T|` entry.
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisPair {
    /// Jacobian in the original parameter order; row 0 is `alpha`.
    pub j: DMatrix<f64>,
    /// Inverse Jacobian in the original parameter order; columns are `beta_n`.
    pub j_inv: DMatrix<f64>,
    /// `permutation[n]` is the original index moved to position `n`
    /// (position 0 holds the largest `|alpha_m|`, lowest index on ties).
    pub permutation: Vec<usize>,
}

impl BasisPair {
    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    /// The component of `alpha` used as pivot.
    pub fn pivot_index(&self) -> usize {
        self.permutation[0]
    }
}

pub fn build_dual_basis(alpha: &DVector<f64>) -> Result<BasisPair> {
    let k = alpha.len();
    if k == 0 {
        return Err(Error::InvalidArgument("alpha is empty".into()));
    }
    check_finite("alpha", alpha.as_slice())?;
    let mut pivot = 0;
    for m in 1..k {
        if alpha[m].abs() > alpha[pivot].abs() {
            pivot = m;
        }
    }
    if alpha[pivot] == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut permutation: Vec<usize> = (0..k).collect();
    permutation.swap(0, pivot);
    let a: Vec<f64> = permutation.iter().map(|&m| alpha[m]).collect();
    let a1 = a[0];

    // Permuted coordinates, V = identity.
    let mut jp = DMatrix::identity(k, k);
    let mut jp_inv = DMatrix::identity(k, k);
    for n in 0..k {
        jp[(0, n)] = a[n];
    }
    jp_inv[(0, 0)] = 1.0 / a1;
    for n in 1..k {
        jp_inv[(0, n)] = -a[n] / a1;
    }

    // x'_i = x_{perm[i]}, i.e. x' = P x.
    let mut p = DMatrix::zeros(k, k);
    for (i, &m) in permutation.iter().enumerate() {
        p[(i, m)] = 1.0;
    }
    Ok(BasisPair {
        j: &jp * &p,
        j_inv: p.transpose() * jp_inv,
        permutation,
    })
}

/// `(J^-1)^T F J^-1`, the Fisher matrix in the new parameters.
pub fn transform_fisher(f_theta: &DMatrix<f64>, basis: &BasisPair) -> Result<DMatrix<f64>> {
    let k = basis.dim();
    check_len("Fisher matrix rows", k, f_theta.nrows())?;
    check_len("Fisher matrix columns", k, f_theta.ncols())?;
    check_finite("Fisher matrix", f_theta.as_slice())?;
    let asymmetry = (f_theta - f_theta.transpose()).amax();
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::AsymmetricFisher { asymmetry });
    }
    let out = basis.j_inv.transpose() * f_theta * &basis.j_inv;
    Ok((&out + out.transpose()) * 0.5)
}

/// Classical Fisher matrix `t^2 (G^T w)(G^T w)^T` of the parity measurement.
pub fn ghz_rank_one_fisher(g: &GradientMatrix, w: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_len("weights", g.sensors(), w.len())?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time must be positive, got {t}"
        )));
    }
    let l = g.entries.transpose() * w;
    Ok(&l * l.transpose() * (t * t))
}

/// Largest `|F_{0n}|` for `n >= 1`: information about `q` shared with nuisance parameters.
pub fn first_row_leak(f_q: &DMatrix<f64>) -> f64 {
    (1..f_q.ncols())
        .map(|n| f_q[(0, n)].abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_identity(m: &DMatrix<f64>, eps: f64) {
        let k = m.nrows();
        assert_abs_diff_eq!(
            (m - DMatrix::<f64>::identity(k, k)).amax(),
            0.0,
            epsilon = eps
        );
    }

    #[test]
    fn unit_alpha() {
        let b = build_dual_basis(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_identity(&b.j, 0.0);
        assert_identity(&b.j_inv, 0.0);
        assert_eq!(b.permutation, vec![0, 1]);
    }

    #[test]
    fn max_magnitude_pivot() {
        let alpha = DVector::from_vec(vec![0.0, 2.0]);
        let b = build_dual_basis(&alpha).unwrap();
        assert_eq!(b.permutation, vec![1, 0]);
        // beta_1 in original order is (0, 1/2)
        assert_abs_diff_eq!(b.j_inv[(1, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.j_inv[(0, 0)], 0.0, epsilon = 1e-15);
        assert_eq!(b.j.row(0).transpose(), alpha);
        assert_identity(&(&b.j * &b.j_inv), 1e-15);
    }

    #[test]
    fn ties_use_lowest_index() {
        let b = build_dual_basis(&DVector::from_vec(vec![1.0, -3.0, 3.0])).unwrap();
        assert_eq!(b.pivot_index(), 1);
    }

    #[test]
    fn rejects_zero_and_asymmetric() {
        assert!(matches!(
            build_dual_basis(&DVector::zeros(3)),
            Err(Error::ZeroVector)
        ));
        let b = build_dual_basis(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            transform_fisher(&f, &b),
            Err(Error::AsymmetricFisher { .. })
        ));
    }

    #[test]
    fn identity_fisher() {
        let b = build_dual_basis(&DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert_identity(
            &transform_fisher(&DMatrix::identity(3, 3), &b).unwrap(),
            1e-15,
        );
    }

    #[test]
    fn rank_one_has_no_leak_diagonal_does() {
        let alpha = DVector::from_vec(vec![0.4, -1.3, 0.7]);
        let b = build_dual_basis(&alpha).unwrap();
        let c = 2.5;
        let f = &alpha * alpha.transpose() * c;
        let fq = transform_fisher(&f, &b).unwrap();
        assert!(first_row_leak(&fq) <= 1e-12);
        let a1 = alpha[b.pivot_index()];
        let l11 = f[(b.pivot_index(), b.pivot_index())];
        assert_abs_diff_eq!(fq[(0, 0)], l11 / (a1 * a1), epsilon = 1e-12);

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(first_row_leak(&transform_fisher(&diag, &b).unwrap()) > 1e-3);
    }

    #[test]
    fn ghz_fisher() {
        let g =
            GradientMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w = DVector::from_vec(vec![0.5, -0.5, 0.5]);
        let f = ghz_rank_one_fisher(&g, &w, 3.0).unwrap();
        assert_abs_diff_eq!(f[(0, 0)], 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[(0, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[(1, 1)], 0.0, epsilon = 1e-15);
        assert_eq!(
            ghz_rank_one_fisher(&g, &DVector::zeros(3), 1.0).unwrap(),
            DMatrix::zeros(2, 2)
        );
        let b = build_dual_basis(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(first_row_leak(&transform_fisher(&f, &b).unwrap()) <= 1e-15);
    }
}
