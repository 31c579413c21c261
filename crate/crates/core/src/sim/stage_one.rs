//! Stage one of the two-step protocol: estimate every `f_i` separately with
//! doubling interrogation times, then invert the field model.
//!
//! Round `r` uses time `tau_0 2^r`, and the times add up to the stage budget
//! `t1`. The first time is short enough that a field within the declared
//! bound cannot wrap; each later round measures the phase relative to the
//! previous estimate, so its residual stays near zero and precision doubles
//! per round. The final error is set by the last round, about `t1 / 2`, which
//! gives a per-component MSE `c / t1^2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{repetition_rng, sample_phase, split_shots};
use crate::error::{check_finite, check_len, Error, Result};
use crate::estimation::gradient_rank;
use crate::field::FieldModel;

/// Gauss-Newton settings for inverting nonlinear models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryOptions {
    pub max_iterations: usize,
    /// Relative step size at which the iteration stops.
    pub tolerance: f64,
    /// Starting point; the model's default guess when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            max_iterations: 100,
            tolerance: 1e-12,
            initial_guess: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOneOptions {
    /// Shots per sensor per round.
    pub shots_per_round: u64,
    /// Declared bound on `|f_i|`; fixes the first interrogation time.
    pub field_bound: f64,
    pub quadrature_split: f64,
    pub max_rounds: usize,
    pub recovery: RecoveryOptions,
}

impl Default for StageOneOptions {
    fn default() -> Self {
        StageOneOptions {
            shots_per_round: 1000,
            field_bound: 1.0,
            quadrature_split: 0.5,
            max_rounds: 60,
            recovery: RecoveryOptions::default(),
        }
    }
}

/// Interrogation times `tau_0 2^r`, `r < R`, summing to `t1`, with the fewest
/// rounds such that `tau_0 * field_bound <= pi / 2`.
pub fn stage_one_rounds(t1: f64, field_bound: f64, max_rounds: usize) -> Result<Vec<f64>> {
    if !(t1 > 0.0) || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "stage-one time must be positive, got {t1}"
        )));
    }
    if !(field_bound > 0.0) || !field_bound.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "field bound must be positive, got {field_bound}"
        )));
    }
    for rounds in 1..=max_rounds.min(62) {
        let tau0 = t1 / ((1u64 << rounds) - 1) as f64;
        if tau0 * field_bound <= std::f64::consts::FRAC_PI_2 {
            return Ok((0..rounds).map(|r| tau0 * (1u64 << r) as f64).collect());
        }
    }
    Err(Error::InvalidArgument(format!(
        "stage-one time {t1} needs more than {max_rounds} doubling rounds"
    )))
}

/// Multi-round estimate of a single field value `f`.
pub fn estimate_field_multiscale<R: Rng + ?Sized>(
    rng: &mut R,
    f: f64,
    taus: &[f64],
    shots: u64,
    split: f64,
) -> Result<f64> {
    let (ns, nc) = split_shots(shots, split);
    let mut estimate = 0.0;
    for (r, &tau) in taus.iter().enumerate() {
        let phi = tau * (f - estimate);
        if r == 0 && phi.abs() >= std::f64::consts::PI {
            return Err(Error::PhaseWrap { phase: phi });
        }
        estimate += sample_phase(rng, phi, ns, nc) / tau;
    }
    Ok(estimate)
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-10 * svd.singular_values.amax().max(f64::MIN_POSITIVE);
    svd.solve(b, eps)
        .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))
}

/// Parameters whose field vector best matches `f_tilde` in least squares.
///
/// Linear models are solved directly (minimum-norm solution); nonlinear
/// models use damped Gauss-Newton from the configured initial guess.
pub fn recover_parameters(
    model: &FieldModel,
    f_tilde: &DVector<f64>,
    options: &RecoveryOptions,
) -> Result<DVector<f64>> {
    check_len("field estimate", model.sensors(), f_tilde.len())?;
    check_finite("field estimate", f_tilde.as_slice())?;
    let k = model.param_dim();
    if model.is_linear() {
        let zero = vec![0.0; k];
        let offset = model.field_vector(&zero)?;
        let g = model.gradient_matrix(&zero)?;
        return least_squares(&g.entries, &(f_tilde - offset));
    }

    let mut theta = match &options.initial_guess {
        Some(v) => {
            check_len("initial guess", k, v.len())?;
            DVector::from_column_slice(v)
        }
        None => model.default_initial_guess(),
    };
    let mut residual = model.field_vector(theta.as_slice())? - f_tilde;
    for _ in 0..options.max_iterations {
        let jac = model.gradient_matrix(theta.as_slice())?;
        let delta = least_squares(&jac.entries, &(-&residual))?;
        if delta.norm() <= options.tolerance * (1.0 + theta.norm()) {
            return Ok(theta + delta);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &theta + &delta * step;
            if let Ok(fv) = model.field_vector(candidate.as_slice()) {
                let r = fv - f_tilde;
                if r.norm() < residual.norm() {
                    theta = candidate;
                    residual = r;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent left: either converged to rounding level or stuck.
            if delta.norm() <= 1e-6 * (1.0 + theta.norm()) {
                return Ok(theta);
            }
            return Err(Error::NewtonDivergence {
                iterations: options.max_iterations,
            });
        }
    }
    Err(Error::NewtonDivergence {
        iterations: options.max_iterations,
    })
}

/// Stage-one estimate of `theta` from a simulated experiment of total time `t1`.
pub fn stage_one_estimate(
    model: &FieldModel,
    theta_true: &[f64],
    t1: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    stage_one_estimate_with(model, theta_true, t1, seed, &StageOneOptions::default())
}

pub fn stage_one_estimate_with(
    model: &FieldModel,
    theta_true: &[f64],
    t1: f64,
    seed: u64,
    options: &StageOneOptions,
) -> Result<DVector<f64>> {
    let mut rng = repetition_rng(seed, 0);
    stage_one_with_rng(model, theta_true, t1, &mut rng, options)
}

pub(crate) fn stage_one_with_rng<R: Rng + ?Sized>(
    model: &FieldModel,
    theta_true: &[f64],
    t1: f64,
    rng: &mut R,
    options: &StageOneOptions,
) -> Result<DVector<f64>> {
    if options.shots_per_round < 2 {
        return Err(Error::InvalidArgument(
            "stage one needs at least 2 shots per round".into(),
        ));
    }
    if !(options.quadrature_split > 0.0 && options.quadrature_split < 1.0) {
        return Err(Error::InvalidArgument(
            "quadrature split must lie in (0, 1)".into(),
        ));
    }
    let g = model.gradient_matrix(theta_true)?;
    let rank = gradient_rank(&g);
    if rank < model.param_dim() {
        return Err(Error::RankDeficient {
            rank,
            k: model.param_dim(),
        });
    }
    let f = model.field_vector(theta_true)?;
    let taus = stage_one_rounds(t1, options.field_bound, options.max_rounds)?;
    let mut f_tilde = DVector::zeros(f.len());
    for i in 0..f.len() {
        f_tilde[i] = estimate_field_multiscale(
            rng,
            f[i],
            &taus,
            options.shots_per_round,
            options.quadrature_split,
        )?;
    }
    recover_parameters(model, &f_tilde, &options.recovery)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> FieldModel {
        FieldModel::explicit_linear(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            DVector::zeros(3),
        )
        .unwrap()
    }

    fn mobile() -> FieldModel {
        let sensors = (0..5)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / 5.0;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        FieldModel::point_sources(sensors, vec![vec![0.0, 0.0]], true).unwrap()
    }

    #[test]
    fn rounds_sum_to_budget() {
        let taus = stage_one_rounds(1000.0, 1.0, 60).unwrap();
        assert_eq!(taus.len(), 10);
        assert_abs_diff_eq!(taus.iter().sum::<f64>(), 1000.0, epsilon = 1e-9);
        assert!(taus[0] <= std::f64::consts::FRAC_PI_2);
        for w in taus.windows(2) {
            assert_abs_diff_eq!(w[1], 2.0 * w[0], epsilon = 1e-12);
        }
        assert_eq!(stage_one_rounds(1.0, 1.0, 60).unwrap(), vec![1.0]);
        assert!(stage_one_rounds(1e6, 1.0, 5).is_err());
        assert!(stage_one_rounds(0.0, 1.0, 5).is_err());
    }

    #[test]
    fn zero_noise_recovery() {
        let m = toy();
        let theta = DVector::from_vec(vec![0.3, -0.2]);
        let f = m.field_vector(theta.as_slice()).unwrap();
        let rec = recover_parameters(&m, &f, &RecoveryOptions::default()).unwrap();
        assert_abs_diff_eq!((rec - &theta).amax(), 0.0, epsilon = 1e-14);

        let m = mobile();
        let theta = DVector::from_vec(vec![1.0, 0.1, -0.05]);
        let f = m.field_vector(theta.as_slice()).unwrap();
        let rec = recover_parameters(&m, &f, &RecoveryOptions::default()).unwrap();
        assert_abs_diff_eq!((rec - &theta).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn first_round_wrap_is_reported() {
        let m = toy();
        let opts = StageOneOptions {
            field_bound: 0.01,
            ..StageOneOptions::default()
        };
        let r = stage_one_estimate_with(&m, &[5.0, 0.0], 100.0, 1, &opts);
        assert!(matches!(r, Err(Error::PhaseWrap { .. })));
    }

    #[test]
    fn rank_deficient_model_rejected() {
        let m = FieldModel::explicit_linear(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert!(matches!(
            stage_one_estimate(&m, &[0.1, 0.1], 10.0, 0),
            Err(Error::RankDeficient { rank: 1, k: 2 })
        ));
    }

    #[test]
    fn estimate_error_shrinks_with_time() {
        let m = toy();
        let theta = [0.3, -0.2];
        let mse = |t1: f64| {
            (0..30)
                .map(|s| {
                    let e = stage_one_estimate(&m, &theta, t1, s).unwrap();
                    (e[0] - theta[0]).powi(2) + (e[1] - theta[1]).powi(2)
                })
                .sum::<f64>()
                / 60.0
        };
        let a = mse(100.0);
        let b = mse(1000.0);
        assert!(a.sqrt() < 1e-2);
        assert!(b < a / 30.0, "{a} {b}");
    }

    #[test]
    fn nonlinear_stage_one() {
        let m = mobile();
        let theta = [1.0, 0.1, -0.05];
        let e = stage_one_estimate(&m, &theta, 1000.0, 3).unwrap();
        assert!((e - DVector::from_column_slice(&theta)).amax() < 1e-2);
    }
}
