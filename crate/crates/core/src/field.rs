//! Parametrized scalar fields `f(x; theta)` sampled by a sensor network.
//!
//! A [`FieldModel`] couples a field family with the sensor positions
//! `x_1, ..., x_d`. It evaluates the local amplitudes `f_i(theta) = f(x_i; theta)`
//! and the gradient matrix `G_im = d f_i / d theta_m` that drives every
//! estimation problem in this crate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

const COINCIDENCE_TOL: f64 = 1e-12;

/// One scalar function `b_m(x)` from the fixed basis catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFunction {
    /// `prod_c x_c^{powers_c}`.
    Monomial { powers: Vec<u32> },
    /// `exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { center: Vec<f64>, width: f64 },
    /// `1 / |x - center|`.
    InverseDistance { center: Vec<f64> },
}

impl BasisFunction {
    /// All monomials in `dim` variables with total degree at most `degree`,
    /// ordered by total degree and then with earlier coordinates first
    /// (`1, x, y, x^2, xy, y^2, ...`).
    pub fn monomials(dim: usize, degree: u32) -> Vec<BasisFunction> {
        let mut out = Vec::new();
        for total in 0..=degree {
            let mut powers = vec![0u32; dim];
            push_compositions(total, 0, &mut powers, &mut out);
        }
        out
    }

    fn coordinate_dim(&self) -> Option<usize> {
        match self {
            BasisFunction::Monomial { powers } => Some(powers.len()),
            BasisFunction::Gaussian { center, .. } | BasisFunction::InverseDistance { center } => {
                Some(center.len())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BasisFunction::Monomial { powers } => powers
                .iter()
                .zip(x)
                .map(|(&p, &xc)| xc.powi(p as i32))
                .product(),
            BasisFunction::Gaussian { center, width } => {
                let r2 = squared_distance(x, center);
                (-r2 / (2.0 * width * width)).exp()
            }
            BasisFunction::InverseDistance { center } => 1.0 / squared_distance(x, center).sqrt(),
        }
    }

    fn singular_at(&self, x: &[f64]) -> bool {
        match self {
            BasisFunction::InverseDistance { center } => {
                squared_distance(x, center).sqrt() <= COINCIDENCE_TOL
            }
            _ => false,
        }
    }
}

fn push_compositions(
    remaining: u32,
    idx: usize,
    powers: &mut Vec<u32>,
    out: &mut Vec<BasisFunction>,
) {
    if idx + 1 == powers.len() {
        powers[idx] = remaining;
        out.push(BasisFunction::Monomial {
            powers: powers.clone(),
        });
        powers[idx] = 0;
        return;
    }
    if powers.is_empty() {
        if remaining == 0 {
            out.push(BasisFunction::Monomial { powers: Vec::new() });
        }
        return;
    }
    for p in (0..=remaining).rev() {
        powers[idx] = p;
        push_compositions(remaining - p, idx + 1, powers, out);
    }
    powers[idx] = 0;
}

/// The field family.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    /// `f(x; theta) = sum_m theta_m b_m(x)`.
    LinearBasis { basis: Vec<BasisFunction> },
    /// `f(x; theta) = sum_j s_j / |x - p_j|`.
    ///
    /// With `mobile == false` the parameters are the strengths `s_j` and the
    /// source coordinates are fixed. With `mobile == true` the parameter
    /// vector is `(s_1, ..., s_n, p_1, ..., p_n)` (positions flattened) and
    /// `sources` only holds reference coordinates used as an initial guess.
    PointSources {
        sources: Vec<Vec<f64>>,
        mobile: bool,
    },
    /// `f = G theta + c` with an explicit `d x k` matrix.
    ExplicitLinear {
        gradient: DMatrix<f64>,
        offset: DVector<f64>,
    },
}

/// Gradient matrix `G_im = d f_i / d theta_m` evaluated at `eval_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    pub entries: DMatrix<f64>,
    pub eval_point: DVector<f64>,
}

impl GradientMatrix {
    /// Wraps a raw matrix that was not produced by a model.
    pub fn from_matrix(entries: DMatrix<f64>) -> Self {
        let k = entries.ncols();
        GradientMatrix {
            entries,
            eval_point: DVector::zeros(k),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "gradient matrix needs at least one row".into(),
            ));
        }
        let k = rows[0].len();
        for row in rows {
            check_len("gradient matrix row", k, row.len())?;
            check_finite("gradient matrix", row)?;
        }
        Ok(Self::from_matrix(DMatrix::from_fn(d, k, |i, m| rows[i][m])))
    }

    pub fn sensors(&self) -> usize {
        self.entries.nrows()
    }

    pub fn params(&self) -> usize {
        self.entries.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.amax()
    }
}

/// A parametrized field together with the sensor positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    kind: FieldKind,
    positions: Vec<Vec<f64>>,
    param_dim: usize,
}

impl FieldModel {
    /// `f = G theta + offset`. Sensor positions are not needed and are left empty.
    pub fn explicit_linear(gradient: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let (d, k) = gradient.shape();
        if d == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "explicit gradient must be non-empty".into(),
            ));
        }
        check_len("offset", d, offset.len())?;
        check_finite("gradient", gradient.as_slice())?;
        check_finite("offset", offset.as_slice())?;
        Ok(FieldModel {
            kind: FieldKind::ExplicitLinear { gradient, offset },
            positions: vec![Vec::new(); d],
            param_dim: k,
        })
    }

    pub fn linear_basis(positions: Vec<Vec<f64>>, basis: Vec<BasisFunction>) -> Result<Self> {
        let dim = validate_positions(&positions)?;
        if basis.is_empty() {
            return Err(Error::InvalidArgument(
                "basis must contain at least one function".into(),
            ));
        }
        for b in &basis {
            if let Some(bd) = b.coordinate_dim() {
                check_len("basis coordinate dimension", dim, bd)?;
            }
            if let BasisFunction::Gaussian { width, center } = b {
                check_finite("gaussian center", center)?;
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "gaussian width must be positive".into(),
                    ));
                }
            }
            if let BasisFunction::InverseDistance { center } = b {
                check_finite("inverse-distance center", center)?;
            }
            for (i, x) in positions.iter().enumerate() {
                if b.singular_at(x) {
                    return Err(Error::SingularConfiguration {
                        sensor: i,
                        source_index: 0,
                    });
                }
            }
        }
        let k = basis.len();
        Ok(FieldModel {
            kind: FieldKind::LinearBasis { basis },
            positions,
            param_dim: k,
        })
    }

    pub fn point_sources(
        positions: Vec<Vec<f64>>,
        sources: Vec<Vec<f64>>,
        mobile: bool,
    ) -> Result<Self> {
        let dim = validate_positions(&positions)?;
        if sources.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one point source is required".into(),
            ));
        }
        for s in &sources {
            check_len("source coordinate dimension", dim, s.len())?;
            check_finite("source coordinates", s)?;
        }
        // Fixed sources are checked once here; mobile sources are checked at evaluation.
        for (i, x) in positions.iter().enumerate() {
            for (j, p) in sources.iter().enumerate() {
                if squared_distance(x, p).sqrt() <= COINCIDENCE_TOL {
                    return Err(Error::SingularConfiguration {
                        sensor: i,
                        source_index: j,
                    });
                }
            }
        }
        let n = sources.len();
        let k = if mobile { n * (1 + dim) } else { n };
        Ok(FieldModel {
            kind: FieldKind::PointSources { sources, mobile },
            positions,
            param_dim: k,
        })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    /// Coordinate dimension of the control space (0 for explicit models).
    pub fn coordinate_dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// True when `f` is affine in `theta`, so `G` does not depend on `theta`.
    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, FieldKind::PointSources { mobile: true, .. })
    }

    /// The same field family with sensors moved to `positions`.
    pub fn with_positions(&self, positions: Vec<Vec<f64>>) -> Result<Self> {
        match &self.kind {
            FieldKind::LinearBasis { basis } => Self::linear_basis(positions, basis.clone()),
            FieldKind::PointSources { sources, mobile } => {
                Self::point_sources(positions, sources.clone(), *mobile)
            }
            FieldKind::ExplicitLinear { .. } => Err(Error::InvalidArgument(
                "explicit linear models have no sensor positions".into(),
            )),
        }
    }

    /// A parameter vector to start iterative recovery from: zeros for linear
    /// models, unit strengths at the reference coordinates for mobile sources.
    pub fn default_initial_guess(&self) -> DVector<f64> {
        match &self.kind {
            FieldKind::PointSources {
                sources,
                mobile: true,
            } => {
                let n = sources.len();
                let mut v = vec![1.0; n];
                for s in sources {
                    v.extend_from_slice(s);
                }
                DVector::from_vec(v)
            }
            _ => DVector::zeros(self.param_dim),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        check_len("theta", self.param_dim, theta.len())?;
        check_finite("theta", theta)
    }

    /// `f(x; theta)` at an arbitrary point of the control space.
    pub fn field_at(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        match &self.kind {
            FieldKind::LinearBasis { basis } => {
                check_len("point dimension", self.coordinate_dim(), x.len())?;
                if basis.iter().any(|b| b.singular_at(x)) {
                    return Err(Error::TargetOnSource(0));
                }
                Ok(basis.iter().zip(theta).map(|(b, t)| t * b.eval(x)).sum())
            }
            FieldKind::PointSources { sources, mobile } => {
                check_len("point dimension", self.coordinate_dim(), x.len())?;
                let n = sources.len();
                let mut total = 0.0;
                for j in 0..n {
                    let p = source_position(sources, *mobile, theta, j);
                    let r = squared_distance(x, p).sqrt();
                    if r <= COINCIDENCE_TOL {
                        return Err(Error::TargetOnSource(j));
                    }
                    total += theta[j] / r;
                }
                Ok(total)
            }
            FieldKind::ExplicitLinear { .. } => Err(Error::InvalidArgument(
                "explicit linear models cannot be evaluated off the sensors".into(),
            )),
        }
    }

    /// Analytic `d f(x; theta) / d theta` at an arbitrary point.
    pub fn point_gradient(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        match &self.kind {
            FieldKind::LinearBasis { basis } => {
                check_len("point dimension", self.coordinate_dim(), x.len())?;
                if basis.iter().any(|b| b.singular_at(x)) {
                    return Err(Error::TargetOnSource(0));
                }
                Ok(DVector::from_iterator(
                    basis.len(),
                    basis.iter().map(|b| b.eval(x)),
                ))
            }
            FieldKind::PointSources { sources, mobile } => {
                check_len("point dimension", self.coordinate_dim(), x.len())?;
                let n = sources.len();
                let dim = x.len();
                let mut g = DVector::zeros(self.param_dim);
                for j in 0..n {
                    let p = source_position(sources, *mobile, theta, j);
                    let r = squared_distance(x, p).sqrt();
                    if r <= COINCIDENCE_TOL {
                        return Err(Error::TargetOnSource(j));
                    }
                    g[j] = 1.0 / r;
                    if *mobile {
                        let r3 = r * r * r;
                        for c in 0..dim {
                            g[n + j * dim + c] = theta[j] * (x[c] - p[c]) / r3;
                        }
                    }
                }
                Ok(g)
            }
            FieldKind::ExplicitLinear { .. } => Err(Error::InvalidArgument(
                "explicit linear models cannot be evaluated off the sensors".into(),
            )),
        }
    }

    /// Local amplitudes `(f_1(theta), ..., f_d(theta))`.
    pub fn field_vector(&self, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        match &self.kind {
            FieldKind::ExplicitLinear { gradient, offset } => {
                Ok(gradient * DVector::from_column_slice(theta) + offset)
            }
            _ => {
                let mut f = DVector::zeros(self.sensors());
                for (i, x) in self.positions.iter().enumerate() {
                    f[i] = self.field_at(x, theta).map_err(|e| sensor_error(e, i))?;
                }
                Ok(f)
            }
        }
    }

    /// Analytic gradient matrix at `theta`.
    pub fn gradient_matrix(&self, theta: &[f64]) -> Result<GradientMatrix> {
        self.check_theta(theta)?;
        let entries = match &self.kind {
            FieldKind::ExplicitLinear { gradient, .. } => gradient.clone(),
            _ => {
                let mut g = DMatrix::zeros(self.sensors(), self.param_dim);
                for (i, x) in self.positions.iter().enumerate() {
                    let row = self
                        .point_gradient(x, theta)
                        .map_err(|e| sensor_error(e, i))?;
                    g.set_row(i, &row.transpose());
                }
                g
            }
        };
        Ok(GradientMatrix {
            entries,
            eval_point: DVector::from_column_slice(theta),
        })
    }

    /// Central-difference approximation of the gradient matrix.
    pub fn finite_diff_gradient(&self, theta: &[f64], h: f64) -> Result<GradientMatrix> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step h must be positive, got {h}"
            )));
        }
        self.check_theta(theta)?;
        let mut g = DMatrix::zeros(self.sensors(), self.param_dim);
        let mut shifted = theta.to_vec();
        for m in 0..self.param_dim {
            shifted[m] = theta[m] + h;
            let plus = self.field_vector(&shifted)?;
            shifted[m] = theta[m] - h;
            let minus = self.field_vector(&shifted)?;
            shifted[m] = theta[m];
            g.set_column(m, &((plus - minus) / (2.0 * h)));
        }
        Ok(GradientMatrix {
            entries: g,
            eval_point: DVector::from_column_slice(theta),
        })
    }
}

fn sensor_error(e: Error, sensor: usize) -> Error {
    match e {
        Error::TargetOnSource(j) => Error::SingularConfiguration {
            sensor,
            source_index: j,
        },
        other => other,
    }
}

fn source_position<'a>(
    sources: &'a [Vec<f64>],
    mobile: bool,
    theta: &'a [f64],
    j: usize,
) -> &'a [f64] {
    if mobile {
        let n = sources.len();
        let dim = sources[j].len();
        &theta[n + j * dim..n + (j + 1) * dim]
    } else {
        &sources[j]
    }
}

fn validate_positions(positions: &[Vec<f64>]) -> Result<usize> {
    let first = positions
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one sensor position is required".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "sensor coordinates must be non-empty".into(),
        ));
    }
    for x in positions {
        check_len("sensor coordinate dimension", dim, x.len())?;
        check_finite("sensor position", x)?;
    }
    Ok(dim)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
