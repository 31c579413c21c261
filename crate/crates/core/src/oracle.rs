//! Brute-force references for small instances, independent of the simplex code.
//!
//! An optimal vertex of the dual protocol problem has at least `k - 1` rows of
//! `G v` equal to zero, so enumerating `(k-1)`-subsets of rows and taking the
//! null direction of each gives the optimum exactly.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::estimation::gradient_rank;
use crate::field::GradientMatrix;

pub const MAX_ORACLE_SENSORS: usize = 12;
pub const MAX_ORACLE_PARAMS: usize = 4;
const RANK_TOL: f64 = 1e-10;
/// Rows of `G v` below this count as zero.
pub const ZERO_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VertexCertificate {
    pub value: f64,
    pub v: DVector<f64>,
    /// Rows `i` (0-based, increasing) with `(G v)_i = 0`.
    pub zero_rows: Vec<usize>,
}

/// Enumerates dual vertices and returns the one maximizing `alpha . v`.
///
/// Ties keep the earliest subset in lexicographic order.
pub fn enumerate_dual_vertices(
    g: &GradientMatrix,
    alpha: &DVector<f64>,
) -> Result<VertexCertificate> {
    let (d, k) = (g.sensors(), g.params());
    check_len("alpha", k, alpha.len())?;
    if d > MAX_ORACLE_SENSORS || k > MAX_ORACLE_PARAMS {
        return Err(Error::InstanceTooLarge { d, k });
    }
    let rank = gradient_rank(g);
    if d < k || rank < k {
        return Err(Error::RankDeficient { rank, k });
    }
    let mut best: Option<VertexCertificate> = None;
    for subset in Subsets::new(d, k - 1) {
        let sub = g.entries.select_rows(subset.iter());
        let Some(direction) = null_direction(&sub, k) else {
            continue;
        };
        let gv = &g.entries * &direction;
        let norm: f64 = gv.iter().map(|x| x.abs()).sum();
        if norm <= 0.0 {
            continue;
        }
        let mut v = direction / norm;
        if alpha.dot(&v) < 0.0 {
            v = -v;
        }
        let value = alpha.dot(&v);
        let better = match &best {
            None => true,
            Some(b) => value > b.value + 1e-12 * b.value.abs().max(1.0),
        };
        if better {
            let gv = &g.entries * &v;
            let zero_rows = (0..d).filter(|&i| gv[i].abs() <= ZERO_ROW_TOL).collect();
            best = Some(VertexCertificate {
                value,
                v,
                zero_rows,
            });
        }
    }
    best.ok_or(Error::RankDeficient { rank, k })
}

/// Null direction of an `m x k` matrix of rank exactly `k - 1`, by Gaussian
/// elimination with complete pivoting. `None` if the rank is lower.
fn null_direction(a: &DMatrix<f64>, k: usize) -> Option<DVector<f64>> {
    let mut a = a.clone();
    let m = a.nrows();
    let scale = a.amax();
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut used = vec![false; k];
    for step in 0..m.min(k) {
        let mut best = (0.0, 0, 0);
        for i in step..m {
            for j in (0..k).filter(|&j| !used[j]) {
                if a[(i, j)].abs() > best.0 {
                    best = (a[(i, j)].abs(), i, j);
                }
            }
        }
        if best.0 <= RANK_TOL * scale || best.0 == 0.0 {
            break;
        }
        let (_, r, c) = best;
        a.swap_rows(step, r);
        let p = a[(step, c)];
        for j in 0..k {
            a[(step, j)] /= p;
        }
        for i in 0..m {
            if i != step {
                let f = a[(i, c)];
                if f != 0.0 {
                    for j in 0..k {
                        a[(i, j)] -= f * a[(step, j)];
                    }
                }
            }
        }
        used[c] = true;
        pivot_cols.push(c);
    }
    if pivot_cols.len() != k - 1 {
        return None;
    }
    let free = (0..k).find(|&j| !used[j])?;
    let mut v = DVector::zeros(k);
    v[free] = 1.0;
    for (row, &c) in pivot_cols.iter().enumerate() {
        v[c] = -a[(row, free)];
    }
    Some(v)
}

/// Lexicographic enumeration of `r`-subsets of `0..n`.
struct Subsets {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Subsets {
    fn new(n: usize, r: usize) -> Self {
        Subsets {
            n,
            current: (r <= n).then(|| (0..r).collect()),
        }
    }
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let r = out.len();
        let mut next = out.clone();
        let mut i = r;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - r + i {
                next[i] += 1;
                for j in i + 1..r {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Orthonormal basis of the complement of `alpha`, built by Gram-Schmidt on
/// the standard basis vectors.
pub fn orthogonal_complement(alpha: &DVector<f64>) -> Vec<DVector<f64>> {
    let k = alpha.len();
    let mut basis: Vec<DVector<f64>> = vec![alpha.normalize()];
    for j in 0..k {
        if basis.len() == k {
            break;
        }
        let mut e = DVector::zeros(k);
        e[j] = 1.0;
        for b in &basis {
            let c = b.dot(&e);
            e -= b * c;
        }
        let n = e.norm();
        if n > 1e-8 {
            basis.push(e / n);
        }
    }
    basis.remove(0);
    basis
}

/// Largest `1 / ||G beta||_1` over a regular grid on the slice `alpha . beta = 1`,
/// centred at `alpha / ||alpha||^2` with half-width `radius` along each
/// orthonormal direction of the complement of `alpha`. A lower bound on `u`.
pub fn grid_bound_search(
    g: &GradientMatrix,
    alpha: &DVector<f64>,
    radius: f64,
    n: usize,
) -> Result<f64> {
    let k = g.params();
    check_len("alpha", k, alpha.len())?;
    if k > 3 {
        return Err(Error::InstanceTooLarge { d: g.sensors(), k });
    }
    if n == 0 || !(radius >= 0.0) {
        return Err(Error::InvalidArgument(
            "grid needs n >= 1 and radius >= 0".into(),
        ));
    }
    let norm2 = alpha.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let center = alpha / norm2;
    let dirs = orthogonal_complement(alpha);
    let coord = |i: usize| {
        if n == 1 {
            0.0
        } else {
            -radius + 2.0 * radius * i as f64 / (n - 1) as f64
        }
    };
    let points = n.pow(dirs.len() as u32);
    let mut best = 0.0f64;
    for idx in 0..points {
        let mut beta = center.clone();
        let mut rest = idx;
        for dir in &dirs {
            beta += dir * coord(rest % n);
            rest /= n;
        }
        let s: f64 = (&g.entries * &beta).iter().map(|x| x.abs()).sum();
        if s > 0.0 {
            best = best.max(1.0 / s);
        } else {
            best = f64::INFINITY;
        }
    }
    Ok(best)
}

/// A random point on `alpha . beta = 1`: `alpha / ||alpha||^2` plus a standard
/// Gaussian vector projected onto the complement of `alpha`.
pub fn random_feasible_beta(alpha: &DVector<f64>, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(alpha.len(), |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        x
    });
    feasible_beta_from(alpha, &z)
}

/// `alpha / ||alpha||^2 + P z` with `P` the projector onto the complement of `alpha`.
pub fn feasible_beta_from(alpha: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let norm2 = alpha.norm_squared();
    let projected = z - alpha * (alpha.dot(z) / norm2);
    alpha / norm2 + projected
}
