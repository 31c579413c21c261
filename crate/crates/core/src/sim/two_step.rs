//! Two-step protocol for a nonlinear target `q(theta)`.
//!
//! Stage one spends `t1 = t^p` on a rough estimate `theta~`. Stage two
//! linearizes `q` and the field model about `theta~`, solves the protocol
//! problem there for weights `w~`, and spends `t2 = t - t1` measuring
//! `w~ . (f - f(theta~))` with the GHZ protocol, the known part `f(theta~)`
//! entering as a reference phase. The estimate is
//!
//! ```text
//! q^ = q(theta~) + w~ . (f - f(theta~))^
//! ```
//!
//! whose conditional bias `q(theta~) + w~ . (f - f(theta~)) - q(theta)` is
//! quadratic in `theta~ - theta`. The MSE therefore splits into a stage-two
//! variance `M1 ~ 2 u'^2 / (mu t2^2)` and a bias part `M2 = O(t1^-4)`.
//!
//! `M1` is estimated per repetition from batch means of the stage-two shots
//! and `M2` from the exactly known conditional bias, which is far less noisy
//! than the raw squared error of a hundred repetitions (also reported).

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stage_one::{stage_one_with_rng, StageOneOptions};
use super::{
    mean_and_variance, phase_variance, repetition_rng, sample_phase_batched, ProtocolResult,
    ShotPlan,
};
use crate::applications::{build_problem, FunctionSpec};
use crate::error::{Error, Result};
use crate::estimation::solve_protocol;
use crate::field::FieldModel;

fn default_batches() -> usize {
    20
}

fn default_stage_one() -> StageOneOptions {
    StageOneOptions {
        shots_per_round: DEFAULT_STAGE_ONE_SHOTS,
        ..StageOneOptions::default()
    }
}

/// Stage-one shots per sensor and round used by default in the two-step protocol.
///
/// Stage two measures at phase `t2 w~ . (f - f(theta~))`, which grows like
/// `t^(1-p)` times the stage-one error; many cheap stage-one shots keep that
/// phase close to zero, where the two-quadrature variance is `2 / mu`.
pub const DEFAULT_STAGE_ONE_SHOTS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStepOptions {
    #[serde(default = "default_stage_one")]
    pub stage_one: StageOneOptions,
    /// Batches used for the stage-two variance estimate.
    #[serde(default = "default_batches")]
    pub batches: usize,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        TwoStepOptions {
            stage_one: default_stage_one(),
            batches: default_batches(),
        }
    }
}

/// One repetition of the two-step protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepRun {
    pub theta_tilde: DVector<f64>,
    /// Protocol weights at `theta~`.
    pub weights: DVector<f64>,
    pub q_hat: f64,
    /// Conditional bias of `q_hat` given `theta~`.
    pub bias: f64,
    /// Batch-means estimate of the stage-two variance.
    pub variance_estimate: f64,
    /// First-order stage-two variance at the simulated operating phase.
    pub theoretical_variance: f64,
    /// Stage-two phase `t2 w~ . (f - f(theta~)) / ||w~||_inf`.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepResult {
    pub t: f64,
    pub t1: f64,
    pub t2: f64,
    /// `q(theta)` at the true parameters.
    pub truth: f64,
    /// Protocol value `u'` of the linearization at the true parameters.
    pub u_prime: f64,
    pub runs: Vec<TwoStepRun>,
    pub protocol: ProtocolResult,
    /// Mean squared error of the estimates.
    pub mse_raw: f64,
    /// Mean stage-two variance.
    pub m1: f64,
    /// Mean squared conditional bias.
    pub m2: f64,
}

impl TwoStepResult {
    /// `M = M1 + M2`.
    pub fn mse(&self) -> f64 {
        self.m1 + self.m2
    }

    /// Limit of `M mu t2^2` at zero stage-two phase: `u'^2 mu / mu_sin`
    /// (`2 u'^2` for an even split).
    pub fn plateau(&self, plan: &ShotPlan) -> f64 {
        let (ns, _) = plan.quadrature_shots();
        self.u_prime * self.u_prime * plan.shots as f64 / ns as f64
    }
}

/// Runs `plan.repetitions` independent two-step experiments of total time `plan.t`.
pub fn two_step_protocol(
    model: &FieldModel,
    q: &FunctionSpec,
    theta_true: &[f64],
    p: f64,
    plan: &ShotPlan,
    options: &TwoStepOptions,
) -> Result<TwoStepResult> {
    plan.validate()?;
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split exponent p must lie in (1/2, 1), got {p}"
        )));
    }
    let t = plan.t;
    if !(t > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "two-step protocol needs t > 1, got {t}"
        )));
    }
    if options.batches < 2 {
        return Err(Error::InvalidArgument("need at least two batches".into()));
    }
    let t1 = t.powf(p);
    let t2 = t - t1;
    let truth = q.value(model, theta_true)?;
    let u_prime = solve_protocol(&build_problem(model, q, theta_true)?)?.u_prime;
    let f_true = model.field_vector(theta_true)?;
    let (ns, nc) = plan.quadrature_shots();

    let runs: Vec<Result<TwoStepRun>> = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| {
            let mut rng = repetition_rng(plan.seed, r as u64);
            let mut attempt = 0;
            let (theta_tilde, weights) = loop {
                let theta_tilde =
                    stage_one_with_rng(model, theta_true, t1, &mut rng, &options.stage_one)?;
                match build_problem(model, q, theta_tilde.as_slice())
                    .and_then(|pr| solve_protocol(&pr))
                {
                    Ok(sol) => break (theta_tilde, sol.w0),
                    Err(Error::InconsistentConstraint { .. }) if attempt == 0 => attempt += 1,
                    Err(e) => return Err(e),
                }
            };
            let scale = weights.amax();
            if scale == 0.0 {
                return Err(Error::DegenerateWeights);
            }
            let f_tilde = model.field_vector(theta_tilde.as_slice())?;
            let lambda = (&weights / scale).dot(&(&f_true - &f_tilde));
            let phase = t2 * lambda;
            if phase.abs() >= std::f64::consts::PI {
                return Err(Error::PhaseWrap { phase });
            }
            let (phi_hat, phi_var) = sample_phase_batched(&mut rng, phase, ns, nc, options.batches);
            let q_tilde = q.value(model, theta_tilde.as_slice())?;
            Ok(TwoStepRun {
                q_hat: q_tilde + scale * phi_hat / t2,
                bias: q_tilde + scale * lambda - truth,
                variance_estimate: scale * scale * phi_var / (t2 * t2),
                theoretical_variance: scale * scale * phase_variance(phase, ns, nc) / (t2 * t2),
                theta_tilde,
                weights,
                phase,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let n = runs.len() as f64;
    let m1 = runs.iter().map(|r| r.variance_estimate).sum::<f64>() / n;
    let m2 = runs.iter().map(|r| r.bias * r.bias).sum::<f64>() / n;
    let theory = runs.iter().map(|r| r.theoretical_variance).sum::<f64>() / n;
    let protocol = ProtocolResult::from_samples(
        runs.iter().map(|r| r.q_hat).collect(),
        truth,
        theory,
        plan.shots,
    );
    Ok(TwoStepResult {
        t,
        t1,
        t2,
        truth,
        u_prime,
        mse_raw: protocol.mse(),
        m1,
        m2,
        runs,
        protocol,
    })
}

/// One line of an MSE convergence table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub t: f64,
    pub t1: f64,
    pub t2: f64,
    /// `M = M1 + M2`.
    pub mse: f64,
    pub mse_raw: f64,
    pub m1: f64,
    pub m2: f64,
    /// `M mu t^2`.
    pub scaled: f64,
    /// `M mu t2^2`.
    pub scaled_t2: f64,
    /// Zero-phase limit of `M mu t2^2`.
    pub plateau: f64,
    pub bias_estimate: f64,
}

/// Two-step runs for every `t` in `t_list` (strictly increasing).
///
/// Each `t` gets its own seed derived from `plan.seed` and its index.
pub fn mse_convergence_sweep(
    model: &FieldModel,
    q: &FunctionSpec,
    theta_true: &[f64],
    t_list: &[f64],
    p: f64,
    plan: &ShotPlan,
    options: &TwoStepOptions,
) -> Result<Vec<SweepRow>> {
    if t_list.is_empty() || t_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "time list must be non-empty and increasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(t_list.len());
    for (j, &t) in t_list.iter().enumerate() {
        let mut pj = plan.clone();
        pj.t = t;
        pj.seed = plan
            .seed
            .wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let res = two_step_protocol(model, q, theta_true, p, &pj, options)?;
        let mse = res.mse();
        let mu = plan.shots as f64;
        rows.push(SweepRow {
            t,
            t1: res.t1,
            t2: res.t2,
            mse,
            mse_raw: res.mse_raw,
            m1: res.m1,
            m2: res.m2,
            scaled: mse * mu * t * t,
            scaled_t2: mse * mu * res.t2 * res.t2,
            plateau: res.plateau(&pj),
            bias_estimate: res.protocol.bias_estimate,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, _) = mean_and_variance(&lx);
    let (my, _) = mean_and_variance(&ly);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn toy() -> FieldModel {
        FieldModel::explicit_linear(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            DVector::zeros(3),
        )
        .unwrap()
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.5)).collect();
        assert_abs_diff_eq!(loglog_slope(&x, &y), -2.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_model_has_no_bias() {
        let q = FunctionSpec::LinearCombination {
            alpha: vec![1.0, 0.0],
        };
        let plan = ShotPlan::new(1000.0, 10_000, 5).with_repetitions(40);
        let r = two_step_protocol(
            &toy(),
            &q,
            &[0.3, -0.2],
            0.75,
            &plan,
            &TwoStepOptions::default(),
        )
        .unwrap();
        assert!(r.m2 < 1e-24);
        assert_abs_diff_eq!(r.u_prime, 0.5, epsilon = 1e-12);
        for run in &r.runs {
            assert_abs_diff_eq!(run.weights[0], 0.5, epsilon = 1e-12);
        }
        let ratio = r.m1 * 10_000.0 * r.t2 * r.t2 / r.plateau(&plan);
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
        assert!(r.protocol.bias_estimate.abs() <= 4.0 * r.protocol.standard_error());
    }

    #[test]
    fn preconditions() {
        let q = FunctionSpec::LinearCombination {
            alpha: vec![1.0, 0.0],
        };
        let plan = ShotPlan::new(100.0, 100, 0);
        let o = TwoStepOptions::default();
        assert!(two_step_protocol(&toy(), &q, &[0.3, -0.2], 0.5, &plan, &o).is_err());
        assert!(two_step_protocol(&toy(), &q, &[0.3, -0.2], 1.0, &plan, &o).is_err());
        let small = ShotPlan::new(1.0, 100, 0);
        assert!(two_step_protocol(&toy(), &q, &[0.3, -0.2], 0.75, &small, &o).is_err());
        assert!(
            mse_convergence_sweep(&toy(), &q, &[0.3, -0.2], &[100.0, 10.0], 0.75, &plan, &o)
                .is_err()
        );
    }

    #[test]
    fn deterministic() {
        let q = FunctionSpec::LinearCombination {
            alpha: vec![1.0, 1.0],
        };
        let plan = ShotPlan::new(500.0, 1000, 8).with_repetitions(10);
        let o = TwoStepOptions::default();
        let a = two_step_protocol(&toy(), &q, &[0.3, -0.2], 0.75, &plan, &o).unwrap();
        let b = two_step_protocol(&toy(), &q, &[0.3, -0.2], 0.75, &plan, &o).unwrap();
        assert_eq!(a, b);
    }
}
