//! Target functions `q(theta)` built on a field model: explicit linear
//! combinations, the field value at an unsampled point, and kernel-weighted
//! integrals of the field over a box. Also a local search for sensor
//! positions that minimize the optimal protocol value `u'`.

use gauss_quad::GaussLegendre;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::estimation::{check_identifiability, solve_protocol, EstimationProblem};
use crate::field::{squared_distance, FieldModel};

/// Integration weight `k(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    Constant {
        value: f64,
    },
    /// `exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        center: Vec<f64>,
        width: f64,
    },
    /// Point evaluation at `x0`; integrated exactly.
    Delta {
        x0: Vec<f64>,
    },
}

impl Kernel {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Kernel::Constant { value } => *value,
            Kernel::Gaussian { center, width } => {
                (-squared_distance(x, center) / (2.0 * width * width)).exp()
            }
            Kernel::Delta { .. } => 0.0,
        }
    }
}

fn default_panels() -> usize {
    1
}

/// The quantity to estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `q = alpha . theta`.
    LinearCombination { alpha: Vec<f64> },
    /// `q = f(x0; theta)`.
    FieldAtPoint { x0: Vec<f64> },
    /// `q = int_R k(x) f(x; theta) dx` over the box `region` (one `[lo, hi]`
    /// per coordinate), by tensor-product Gauss-Legendre with `order` nodes
    /// on each of `panels` subintervals per axis.
    KernelFunctional {
        kernel: Kernel,
        region: Vec<[f64; 2]>,
        order: usize,
        #[serde(default = "default_panels")]
        panels: usize,
    },
}

impl FunctionSpec {
    /// Field value at `x0`, written as a kernel functional with a delta kernel.
    pub fn delta(x0: Vec<f64>) -> Self {
        FunctionSpec::KernelFunctional {
            kernel: Kernel::Delta { x0 },
            region: Vec::new(),
            order: 2,
            panels: 1,
        }
    }

    pub fn is_linear_combination(&self) -> bool {
        matches!(self, FunctionSpec::LinearCombination { .. })
    }

    /// `q(theta)`.
    pub fn value(&self, model: &FieldModel, theta: &[f64]) -> Result<f64> {
        match self {
            FunctionSpec::LinearCombination { alpha } => {
                check_len("alpha", model.param_dim(), alpha.len())?;
                check_len("theta", model.param_dim(), theta.len())?;
                Ok(alpha.iter().zip(theta).map(|(a, t)| a * t).sum())
            }
            FunctionSpec::FieldAtPoint { x0 } => model.field_at(x0, theta),
            FunctionSpec::KernelFunctional {
                kernel: Kernel::Delta { x0 },
                ..
            } => model.field_at(x0, theta),
            FunctionSpec::KernelFunctional {
                kernel,
                region,
                order,
                panels,
            } => {
                let nodes = quadrature_nodes(region, *order, *panels)?;
                let mut total = 0.0;
                for (x, w) in &nodes {
                    let k = kernel.eval(x);
                    if k != 0.0 {
                        total += w * k * model.field_at(x, theta)?;
                    }
                }
                Ok(total)
            }
        }
    }

    /// `grad q(theta)`.
    pub fn gradient(&self, model: &FieldModel, theta: &[f64]) -> Result<DVector<f64>> {
        match self {
            FunctionSpec::LinearCombination { alpha } => {
                check_len("alpha", model.param_dim(), alpha.len())?;
                check_finite("alpha", alpha)?;
                Ok(DVector::from_column_slice(alpha))
            }
            FunctionSpec::FieldAtPoint { x0 } => model.point_gradient(x0, theta),
            FunctionSpec::KernelFunctional {
                kernel: Kernel::Delta { x0 },
                ..
            } => model.point_gradient(x0, theta),
            FunctionSpec::KernelFunctional {
                kernel,
                region,
                order,
                panels,
            } => {
                let nodes = quadrature_nodes(region, *order, *panels)?;
                let mut total = DVector::zeros(model.param_dim());
                for (x, w) in &nodes {
                    let k = kernel.eval(x);
                    if k != 0.0 {
                        total += model.point_gradient(x, theta)? * (w * k);
                    }
                }
                Ok(total)
            }
        }
    }
}

/// Tensor-product composite Gauss-Legendre nodes and weights on a box.
pub fn quadrature_nodes(
    region: &[[f64; 2]],
    order: usize,
    panels: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    if region.is_empty() {
        return Err(Error::InvalidArgument(
            "integration region has no coordinates".into(),
        ));
    }
    for &[lo, hi] in region {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "integration region [{lo}, {hi}] must be finite and non-empty"
            )));
        }
    }
    if panels == 0 {
        return Err(Error::InvalidArgument("need at least one panel".into()));
    }
    let rule = GaussLegendre::new(order).map_err(|_| {
        Error::InvalidArgument(format!("quadrature order must be at least 2, got {order}"))
    })?;
    let axes: Vec<Vec<(f64, f64)>> = region
        .iter()
        .map(|&[lo, hi]| {
            let h = (hi - lo) / panels as f64;
            let mut pts = Vec::with_capacity(panels * order);
            for p in 0..panels {
                let a = lo + h * p as f64;
                for &(node, weight) in rule.as_node_weight_pairs() {
                    pts.push((a + 0.5 * h * (node + 1.0), 0.5 * h * weight));
                }
            }
            pts
        })
        .collect();
    let mut out = vec![(Vec::with_capacity(region.len()), 1.0)];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for (x, w) in &out {
            for &(xi, wi) in axis {
                let mut y = x.clone();
                y.push(xi);
                next.push((y, w * wi));
            }
        }
        out = next;
    }
    Ok(out)
}

/// `(G, alpha)` for `q` with both gradients taken at `theta_ref`.
pub fn build_problem(
    model: &FieldModel,
    q: &FunctionSpec,
    theta_ref: &[f64],
) -> Result<EstimationProblem> {
    let alpha = q.gradient(model, theta_ref)?;
    let g = model.gradient_matrix(theta_ref)?;
    EstimationProblem::new(g, alpha)
}

/// Instance for estimating the field value at an unsampled point `x0`.
pub fn build_interpolation(
    model: &FieldModel,
    x0: &[f64],
    theta_ref: &[f64],
) -> Result<EstimationProblem> {
    build_problem(
        model,
        &FunctionSpec::FieldAtPoint { x0: x0.to_vec() },
        theta_ref,
    )
}

/// Instance for a kernel functional (delta kernels reduce to interpolation).
pub fn build_functional(
    model: &FieldModel,
    q: &FunctionSpec,
    theta_ref: &[f64],
) -> Result<EstimationProblem> {
    match q {
        FunctionSpec::KernelFunctional {
            kernel: Kernel::Delta { x0 },
            ..
        } => build_interpolation(model, x0, theta_ref),
        FunctionSpec::KernelFunctional { .. } => build_problem(model, q, theta_ref),
        _ => Err(Error::InvalidArgument(
            "expected a kernel functional".into(),
        )),
    }
}

/// `u'` for sensors at `positions`, or `None` if `q` is not identifiable there.
pub fn placement_objective(
    template: &FieldModel,
    q: &FunctionSpec,
    theta_ref: &[f64],
    positions: &[Vec<f64>],
) -> Option<f64> {
    let model = template.with_positions(positions.to_vec()).ok()?;
    let p = build_problem(&model, q, theta_ref).ok()?;
    if !check_identifiability(p.g(), p.alpha()) {
        return None;
    }
    solve_protocol(&p).ok().map(|s| s.u_prime)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementOptions {
    /// `[lo, hi]` per coordinate of the control space.
    pub bounds: Vec<[f64; 2]>,
    pub sensors: usize,
    /// Compass sweeps per restart.
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Initial step as a fraction of each coordinate range.
    pub initial_step: f64,
    /// The search of a restart stops once its step falls below this fraction.
    pub min_step: f64,
}

impl PlacementOptions {
    pub fn new(bounds: Vec<[f64; 2]>, sensors: usize) -> Self {
        PlacementOptions {
            bounds,
            sensors,
            budget: 200,
            restarts: 8,
            seed: 0,
            initial_step: 0.25,
            min_step: 1e-10,
        }
    }
}

/// A locally optimal placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementResult {
    pub positions: Vec<Vec<f64>>,
    pub u_prime: f64,
    /// `(iteration, best u' over all restarts after that many sweeps)`.
    pub history: Vec<(usize, f64)>,
    /// Index of the restart that produced `positions`.
    pub restart: usize,
    /// True if some restart used its whole budget before its step shrank below `min_step`.
    pub budget_exhausted: bool,
}

struct RestartOutcome {
    positions: Vec<Vec<f64>>,
    value: f64,
    trace: Vec<f64>,
    exhausted: bool,
}

const MAX_INITIAL_DRAWS: usize = 1000;

/// Gradient-free search for sensor positions minimizing `u'`.
///
/// Each restart draws a random identifiable configuration and runs compass
/// search: every coordinate of every sensor is moved by `+-step` (clamped to
/// the bounds) and a move is kept if it lowers `u'`; after a sweep without
/// improvement the step halves. Restarts run in parallel from independent
/// streams of `seed`; the lowest value wins, ties going to the lower restart
/// index. The result is a local optimum only.
pub fn optimize_placement(
    template: &FieldModel,
    q: &FunctionSpec,
    theta_ref: &[f64],
    options: &PlacementOptions,
) -> Result<PlacementResult> {
    let dim = template.coordinate_dim();
    check_len("placement bounds", dim, options.bounds.len())?;
    for &[lo, hi] in &options.bounds {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "placement bounds [{lo}, {hi}] must be finite"
            )));
        }
    }
    if options.sensors < template.param_dim() {
        return Err(Error::InvalidArgument(format!(
            "need at least as many sensors as parameters ({} < {})",
            options.sensors,
            template.param_dim()
        )));
    }
    if options.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    if !(options.initial_step > 0.0) {
        return Err(Error::InvalidArgument(
            "initial step must be positive".into(),
        ));
    }

    let outcomes: Vec<Option<RestartOutcome>> = (0..options.restarts)
        .into_par_iter()
        .map(|r| run_restart(template, q, theta_ref, options, r))
        .collect();

    let mut best: Option<(usize, &RestartOutcome)> = None;
    for (r, o) in outcomes.iter().enumerate() {
        if let Some(o) = o {
            if best.is_none_or(|(_, b)| o.value < b.value) {
                best = Some((r, o));
            }
        }
    }
    let Some((restart, winner)) = best else {
        return Err(Error::NoIdentifiableConfiguration);
    };

    let finished: Vec<&RestartOutcome> = outcomes.iter().flatten().collect();
    let iterations = finished.iter().map(|o| o.trace.len()).max().unwrap_or(1);
    let history = (0..iterations)
        .map(|it| {
            let v = finished
                .iter()
                .map(|o| o.trace[it.min(o.trace.len() - 1)])
                .fold(f64::INFINITY, f64::min);
            (it, v)
        })
        .collect();

    Ok(PlacementResult {
        positions: winner.positions.clone(),
        u_prime: winner.value,
        history,
        restart,
        budget_exhausted: finished.iter().any(|o| o.exhausted),
    })
}

fn run_restart(
    template: &FieldModel,
    q: &FunctionSpec,
    theta_ref: &[f64],
    options: &PlacementOptions,
    restart: usize,
) -> Option<RestartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(restart as u64);
    let objective = |pos: &[Vec<f64>]| placement_objective(template, q, theta_ref, pos);

    let mut start = None;
    for _ in 0..MAX_INITIAL_DRAWS {
        let pos: Vec<Vec<f64>> = (0..options.sensors)
            .map(|_| {
                options
                    .bounds
                    .iter()
                    .map(|&[lo, hi]| {
                        if hi > lo {
                            rng.random_range(lo..=hi)
                        } else {
                            lo
                        }
                    })
                    .collect()
            })
            .collect();
        if let Some(v) = objective(&pos) {
            start = Some((pos, v));
            break;
        }
    }
    let (mut positions, mut value) = start?;
    let mut trace = vec![value];
    let widths: Vec<f64> = options
        .bounds
        .iter()
        .map(|&[lo, hi]| (hi - lo).max(f64::MIN_POSITIVE))
        .collect();
    let mut step = options.initial_step;
    let mut exhausted = true;
    for _ in 0..options.budget {
        if step < options.min_step {
            exhausted = false;
            break;
        }
        let mut improved = false;
        for i in 0..options.sensors {
            for c in 0..widths.len() {
                let [lo, hi] = options.bounds[c];
                for dir in [1.0, -1.0] {
                    let old = positions[i][c];
                    let candidate = (old + dir * step * widths[c]).clamp(lo, hi);
                    if candidate == old {
                        continue;
                    }
                    positions[i][c] = candidate;
                    match objective(&positions) {
                        Some(v) if v < value => {
                            value = v;
                            improved = true;
                            break;
                        }
                        _ => positions[i][c] = old,
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
        trace.push(value);
    }
    Some(RestartOutcome {
        positions,
        value,
        trace,
        exhausted,
    })
}

/// Exhaustive scan of `u'` over an `n x n` grid of two 1-D sensor positions in `[lo, hi]`.
pub fn grid_placement_scan(
    template: &FieldModel,
    q: &FunctionSpec,
    theta_ref: &[f64],
    lo: f64,
    hi: f64,
    n: usize,
) -> Option<(f64, [f64; 2])> {
    let coord = |i: usize| {
        if n <= 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut best: Option<(f64, [f64; 2])> = None;
    for i in 0..n {
        for j in 0..n {
            let pos = vec![vec![coord(i)], vec![coord(j)]];
            if let Some(v) = placement_objective(template, q, theta_ref, &pos) {
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, [coord(i), coord(j)]));
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BasisFunction;
    use approx::assert_abs_diff_eq;

    fn affine(positions: Vec<Vec<f64>>) -> FieldModel {
        FieldModel::linear_basis(positions, BasisFunction::monomials(1, 1)).unwrap()
    }

    #[test]
    fn interpolation_instance() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let p = build_interpolation(&m, &[0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(p.alpha().as_slice(), &[1.0, 0.5]);
        assert_eq!(p.matrix()[(0, 0)], 1.0);
        assert_eq!(p.matrix()[(0, 1)], 0.0);
        assert_eq!(p.matrix()[(1, 0)], 1.0);
        assert_eq!(p.matrix()[(1, 1)], 1.0);
        assert_abs_diff_eq!(solve_protocol(&p).unwrap().u_prime, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_at_sensor_and_outside_hull() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let at_sensor = build_interpolation(&m, &[1.0], &[0.0, 0.0]).unwrap();
        assert!(solve_protocol(&at_sensor).unwrap().u_prime <= 1.0 + 1e-12);
        let outside = build_interpolation(&m, &[2.0], &[0.0, 0.0]).unwrap();
        assert!(solve_protocol(&outside).unwrap().u_prime >= 1.0 - 1e-12);
    }

    #[test]
    fn constant_kernel_integral() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let q = FunctionSpec::KernelFunctional {
            kernel: Kernel::Constant { value: 1.0 },
            region: vec![[0.0, 1.0]],
            order: 2,
            panels: 1,
        };
        let p = build_functional(&m, &q, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.alpha()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.alpha()[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(q.value(&m, &[2.0, 3.0]).unwrap(), 3.5, epsilon = 1e-13);
    }

    #[test]
    fn delta_kernel_routes_to_interpolation() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let a = build_functional(&m, &FunctionSpec::delta(vec![0.3]), &[0.0, 0.0]).unwrap();
        let b = build_interpolation(&m, &[0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_kernel_converges() {
        let m = FieldModel::linear_basis(vec![vec![0.0, 0.0]; 1], BasisFunction::monomials(2, 3))
            .unwrap();
        let spec = |order| FunctionSpec::KernelFunctional {
            kernel: Kernel::Gaussian {
                center: vec![0.2, -0.1],
                width: 0.7,
            },
            region: vec![[-1.0, 1.0], [-0.5, 1.5]],
            order,
            panels: 2,
        };
        let theta = vec![0.0; m.param_dim()];
        let a8 = spec(8).gradient(&m, &theta).unwrap();
        let a16 = spec(16).gradient(&m, &theta).unwrap();
        assert!((a8 - a16).amax() <= 1e-10);
    }

    #[test]
    fn bad_regions_rejected() {
        assert!(quadrature_nodes(&[[0.0, f64::INFINITY]], 4, 1).is_err());
        assert!(quadrature_nodes(&[[1.0, 0.0]], 4, 1).is_err());
        assert!(quadrature_nodes(&[[0.0, 1.0]], 1, 1).is_err());
        assert!(quadrature_nodes(&[], 4, 1).is_err());
        let nodes = quadrature_nodes(&[[0.0, 2.0], [0.0, 3.0]], 3, 2).unwrap();
        assert_eq!(nodes.len(), 36);
        assert_abs_diff_eq!(
            nodes.iter().map(|(_, w)| w).sum::<f64>(),
            6.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn placement_reaches_optimum() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let q = FunctionSpec::FieldAtPoint { x0: vec![0.5] };
        let mut opts = PlacementOptions::new(vec![[0.0, 1.0]], 2);
        opts.seed = 11;
        opts.restarts = 4;
        let r = optimize_placement(&m, &q, &[0.0, 0.0], &opts).unwrap();
        assert_abs_diff_eq!(r.u_prime, 0.5, epsilon = 1e-9);
        let again = placement_objective(&m, &q, &[0.0, 0.0], &r.positions).unwrap();
        assert_abs_diff_eq!(again, r.u_prime, epsilon = 1e-12);
        assert!(r.history.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(r, optimize_placement(&m, &q, &[0.0, 0.0], &opts).unwrap());
    }

    #[test]
    fn zero_budget_returns_start() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let q = FunctionSpec::FieldAtPoint { x0: vec![0.5] };
        let mut opts = PlacementOptions::new(vec![[0.0, 1.0]], 2);
        opts.budget = 0;
        opts.restarts = 1;
        let r = optimize_placement(&m, &q, &[0.0, 0.0], &opts).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.history[0].1, r.u_prime);
        assert!(r.budget_exhausted);
    }

    #[test]
    fn placement_preconditions() {
        let m = affine(vec![vec![0.0], vec![1.0]]);
        let q = FunctionSpec::FieldAtPoint { x0: vec![0.5] };
        assert!(optimize_placement(
            &m,
            &q,
            &[0.0, 0.0],
            &PlacementOptions::new(vec![[0.0, 1.0]], 1)
        )
        .is_err());
        assert!(optimize_placement(
            &m,
            &q,
            &[0.0, 0.0],
            &PlacementOptions::new(vec![[0.0, f64::NAN]], 2)
        )
        .is_err());
        // every configuration lies on a single point where x0 is not resolvable
        let q_far = FunctionSpec::LinearCombination {
            alpha: vec![0.0, 1.0],
        };
        let opts = PlacementOptions::new(vec![[0.3, 0.3]], 2);
        assert!(matches!(
            optimize_placement(&m, &q_far, &[0.0, 0.0], &opts),
            Err(Error::NoIdentifiableConfiguration)
        ));
    }
}
