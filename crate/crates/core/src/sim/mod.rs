//! Monte-Carlo simulation of the entangled (GHZ) linear-combination protocol,
//! the unentangled baseline, and the two-step protocol for nonlinear targets.
//!
//! A GHZ state whose qubits are flipped at times `t (1 + w_i) / 2` acquires
//! the relative phase `t lambda` with `lambda = w . f`, so the whole network
//! reduces exactly to one phase. Each shot measures either the parity
//! (`P(+1) = (1 + cos phi) / 2`) or the parity after a `pi/2` phase advance
//! (`P(+1) = (1 + sin phi) / 2`); outcome counts are drawn from the exact
//! binomial distributions and `phi` is estimated as `atan2(s, c)`.
//!
//! To first order the estimator variance is
//! `cos^4(phi) / mu_s + sin^4(phi) / mu_c`, which is `2 / mu` at `phi = 0`
//! for an even split. A known reference phase can be subtracted before the
//! measurement so the operating point sits near zero.
//!
//! Repetitions draw from independent ChaCha streams of the plan seed and run
//! in parallel; results are gathered in repetition order, so a seed fixes the
//! output bit for bit regardless of thread count.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

mod stage_one;
mod two_step;

pub use stage_one::{
    estimate_field_multiscale, recover_parameters, stage_one_estimate, stage_one_estimate_with,
    stage_one_rounds, RecoveryOptions, StageOneOptions,
};
pub use two_step::{
    loglog_slope, mse_convergence_sweep, two_step_protocol, SweepRow, TwoStepOptions,
    TwoStepResult, TwoStepRun, DEFAULT_STAGE_ONE_SHOTS,
};

fn default_split() -> f64 {
    0.5
}

fn default_repetitions() -> usize {
    1
}

/// Shot budget for one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotPlan {
    /// Interrogation time per shot.
    pub t: f64,
    /// Shots `mu` per repetition.
    pub shots: u64,
    pub seed: u64,
    /// Fraction of shots measured with the `pi/2`-advanced parity.
    #[serde(default = "default_split")]
    pub quadrature_split: f64,
    /// Independent repetitions of the whole protocol.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Declared bound on `|lambda|` (after rescaling `w` to unit max-norm);
    /// runs with `t * bound >= pi` are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_prior: Option<f64>,
}

impl ShotPlan {
    pub fn new(t: f64, shots: u64, seed: u64) -> Self {
        ShotPlan {
            t,
            shots,
            seed,
            quadrature_split: default_split(),
            repetitions: default_repetitions(),
            phase_prior: None,
        }
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time must be positive, got {}",
                self.t
            )));
        }
        if self.shots < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 shots, got {}",
                self.shots
            )));
        }
        if !(self.quadrature_split > 0.0 && self.quadrature_split < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quadrature split must lie in (0, 1), got {}",
                self.quadrature_split
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument(
                "need at least one repetition".into(),
            ));
        }
        if let Some(b) = self.phase_prior {
            if !(b >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "phase prior must be non-negative, got {b}"
                )));
            }
        }
        Ok(())
    }

    /// `(sin shots, cos shots)`.
    pub fn quadrature_shots(&self) -> (u64, u64) {
        split_shots(self.shots, self.quadrature_split)
    }

    fn check_prior(&self) -> Result<()> {
        if let Some(b) = self.phase_prior {
            let phase = self.t * b;
            if phase >= std::f64::consts::PI {
                return Err(Error::PhaseWrap { phase });
            }
        }
        Ok(())
    }
}

/// Summary of repeated protocol runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    /// One estimate per repetition.
    pub samples: Vec<f64>,
    /// Mean of `samples`.
    pub q_hat: f64,
    /// Unbiased sample variance of `samples` (zero for one repetition).
    pub empirical_variance: f64,
    /// First-order variance of one estimate at the simulated operating point.
    pub theoretical_variance: f64,
    /// `q_hat` minus the simulated true value.
    pub bias_estimate: f64,
    /// Shots per repetition.
    pub shots_used: u64,
    /// The value being estimated.
    pub truth: f64,
}

impl ProtocolResult {
    pub(crate) fn from_samples(
        samples: Vec<f64>,
        truth: f64,
        theoretical_variance: f64,
        shots_used: u64,
    ) -> Self {
        let (q_hat, empirical_variance) = mean_and_variance(&samples);
        ProtocolResult {
            samples,
            q_hat,
            empirical_variance,
            theoretical_variance,
            bias_estimate: q_hat - truth,
            shots_used,
            truth,
        }
    }

    pub fn repetitions(&self) -> usize {
        self.samples.len()
    }

    /// Standard error of `q_hat`.
    pub fn standard_error(&self) -> f64 {
        (self.empirical_variance / self.samples.len() as f64).sqrt()
    }

    pub fn variance_ratio(&self) -> f64 {
        self.empirical_variance / self.theoretical_variance
    }

    /// Mean squared error of the samples against `truth`.
    pub fn mse(&self) -> f64 {
        self.samples
            .iter()
            .map(|q| (q - self.truth).powi(2))
            .sum::<f64>()
            / self.samples.len() as f64
    }
}

pub(crate) fn mean_and_variance(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// `(sin shots, cos shots)` with at least one shot in each quadrature.
pub fn split_shots(shots: u64, split: f64) -> (u64, u64) {
    let s = ((split * shots as f64).round() as u64).clamp(1, shots.saturating_sub(1).max(1));
    (s, shots - s)
}

/// First-order variance of `atan2(s, c)` at phase `phi`.
pub fn phase_variance(phi: f64, shots_sin: u64, shots_cos: u64) -> f64 {
    let (s, c) = phi.sin_cos();
    c.powi(4) / shots_sin as f64 + s.powi(4) / shots_cos as f64
}

/// The deterministic generator for repetition `index` of `seed`.
pub fn repetition_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn parity_mean<R: rand::Rng + ?Sized>(rng: &mut R, expectation: f64, shots: u64) -> (u64, f64) {
    let p = ((1.0 + expectation) / 2.0).clamp(0.0, 1.0);
    let plus = Binomial::new(shots, p)
        .expect("valid binomial parameters")
        .sample(rng);
    (plus, 2.0 * plus as f64 / shots as f64 - 1.0)
}

/// One two-quadrature estimate of `phi`.
pub fn sample_phase<R: rand::Rng + ?Sized>(
    rng: &mut R,
    phi: f64,
    shots_sin: u64,
    shots_cos: u64,
) -> f64 {
    let (sin, cos) = phi.sin_cos();
    let (_, s_hat) = parity_mean(rng, sin, shots_sin);
    let (_, c_hat) = parity_mean(rng, cos, shots_cos);
    s_hat.atan2(c_hat)
}

/// Estimate of `phi` from pooled counts, together with a batch-means estimate
/// of its variance (`batches` equal groups of shots, each estimated separately).
pub fn sample_phase_batched<R: rand::Rng + ?Sized>(
    rng: &mut R,
    phi: f64,
    shots_sin: u64,
    shots_cos: u64,
    batches: usize,
) -> (f64, f64) {
    let b = (batches as u64).min(shots_sin).min(shots_cos).max(1);
    let (sin, cos) = phi.sin_cos();
    let mut total_s = 0u64;
    let mut total_c = 0u64;
    let mut estimates = Vec::with_capacity(b as usize);
    for j in 0..b {
        let ns = shots_sin / b + u64::from(j < shots_sin % b);
        let nc = shots_cos / b + u64::from(j < shots_cos % b);
        let (ps, s_hat) = parity_mean(rng, sin, ns);
        let (pc, c_hat) = parity_mean(rng, cos, nc);
        total_s += ps;
        total_c += pc;
        estimates.push(s_hat.atan2(c_hat));
    }
    let s_hat = 2.0 * total_s as f64 / shots_sin as f64 - 1.0;
    let c_hat = 2.0 * total_c as f64 / shots_cos as f64 - 1.0;
    let variance = if b > 1 {
        mean_and_variance(&estimates).1 / b as f64
    } else {
        f64::NAN
    };
    (s_hat.atan2(c_hat), variance)
}

fn check_weights(f: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    check_len("weights", f.len(), w.len())?;
    check_finite("field", f.as_slice())?;
    check_finite("weights", w.as_slice())?;
    let scale = w.amax();
    if scale == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(scale)
}

/// Entangled protocol estimating `q = w . f`.
pub fn simulate_ghz_linear(
    f: &DVector<f64>,
    w: &DVector<f64>,
    plan: &ShotPlan,
) -> Result<ProtocolResult> {
    simulate_ghz_linear_referenced(f, w, 0.0, plan)
}

/// As [`simulate_ghz_linear`], with a known reference value `lambda_ref` of
/// `(w / ||w||_inf) . f` subtracted from the accumulated phase and added back
/// to the estimate.
pub fn simulate_ghz_linear_referenced(
    f: &DVector<f64>,
    w: &DVector<f64>,
    lambda_ref: f64,
    plan: &ShotPlan,
) -> Result<ProtocolResult> {
    plan.validate()?;
    plan.check_prior()?;
    let scale = check_weights(f, w)?;
    let lambda = (w / scale).dot(f);
    let phi = plan.t * (lambda - lambda_ref);
    if phi.abs() >= std::f64::consts::PI {
        return Err(Error::PhaseWrap { phase: phi });
    }
    let (ns, nc) = plan.quadrature_shots();
    let samples: Vec<f64> = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| {
            let mut rng = repetition_rng(plan.seed, r as u64);
            let phi_hat = sample_phase(&mut rng, phi, ns, nc);
            scale * (lambda_ref + phi_hat / plan.t)
        })
        .collect();
    let theory = scale * scale * phase_variance(phi, ns, nc) / (plan.t * plan.t);
    Ok(ProtocolResult::from_samples(
        samples,
        scale * lambda,
        theory,
        plan.shots,
    ))
}

/// Unentangled baseline: each sensor estimates its own `f_i` over the full
/// time and the results are combined as `sum w_i f_i`.
pub fn simulate_unentangled(
    f: &DVector<f64>,
    w: &DVector<f64>,
    plan: &ShotPlan,
) -> Result<ProtocolResult> {
    simulate_unentangled_referenced(f, w, &DVector::zeros(f.len()), plan)
}

/// As [`simulate_unentangled`], with known per-sensor reference values.
pub fn simulate_unentangled_referenced(
    f: &DVector<f64>,
    w: &DVector<f64>,
    reference: &DVector<f64>,
    plan: &ShotPlan,
) -> Result<ProtocolResult> {
    plan.validate()?;
    plan.check_prior()?;
    check_weights(f, w)?;
    check_len("reference", f.len(), reference.len())?;
    let phases: Vec<f64> = f
        .iter()
        .zip(reference.iter())
        .map(|(fi, ri)| plan.t * (fi - ri))
        .collect();
    if let Some(&phase) = phases.iter().find(|p| p.abs() >= std::f64::consts::PI) {
        return Err(Error::PhaseWrap { phase });
    }
    let (ns, nc) = plan.quadrature_shots();
    let samples: Vec<f64> = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| {
            let mut rng = repetition_rng(plan.seed, r as u64);
            phases
                .iter()
                .enumerate()
                .map(|(i, &phi)| {
                    w[i] * (reference[i] + sample_phase(&mut rng, phi, ns, nc) / plan.t)
                })
                .sum()
        })
        .collect();
    let theory = phases
        .iter()
        .enumerate()
        .map(|(i, &phi)| w[i] * w[i] * phase_variance(phi, ns, nc))
        .sum::<f64>()
        / (plan.t * plan.t);
    Ok(ProtocolResult::from_samples(
        samples,
        w.dot(f),
        theory,
        plan.shots,
    ))
}
