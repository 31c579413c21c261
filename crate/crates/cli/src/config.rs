//! JSON run configuration.
//!
//! A config names the field model, the target function, the true parameters
//! and, depending on the subcommand, a shot plan, two-step settings and
//! placement settings. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fieldsense::applications::{FunctionSpec, PlacementOptions};
use fieldsense::field::{BasisFunction, FieldModel};
use fieldsense::sim::{ShotPlan, StageOneOptions, TwoStepOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `f = G theta + offset`, one row of `gradient` per sensor.
    ExplicitLinear {
        gradient: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    /// `f(x) = sum_m theta_m b_m(x)`; give either `basis` or `monomial_degree`.
    LinearBasis {
        positions: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<Vec<BasisFunction>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        monomial_degree: Option<u32>,
    },
    PointSources {
        positions: Vec<Vec<f64>>,
        sources: Vec<Vec<f64>>,
        #[serde(default)]
        mobile: bool,
    },
}

fn default_p() -> f64 {
    0.75
}

fn default_batches() -> usize {
    TwoStepOptions::default().batches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStepConfig {
    /// Stage one gets `t^p` of the total time `t`.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Total times for `sweep`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_one: Option<StageOneOptions>,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        TwoStepConfig {
            p: default_p(),
            times: Vec::new(),
            stage_one: None,
            batches: default_batches(),
        }
    }
}

impl TwoStepConfig {
    pub fn options(&self) -> TwoStepOptions {
        let defaults = TwoStepOptions::default();
        TwoStepOptions {
            stage_one: self.stage_one.clone().unwrap_or(defaults.stage_one),
            batches: self.batches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    pub bounds: Vec<[f64; 2]>,
    pub sensors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
}

impl PlacementConfig {
    pub fn options(&self) -> PlacementOptions {
        let mut o = PlacementOptions::new(self.bounds.clone(), self.sensors);
        o.seed = self.seed;
        if let Some(b) = self.budget {
            o.budget = b;
        }
        if let Some(r) = self.restarts {
            o.restarts = r;
        }
        if let Some(s) = self.initial_step {
            o.initial_step = s;
        }
        if let Some(s) = self.min_step {
            o.min_step = s;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub function: FunctionSpec,
    /// True parameters; also the linearization point for `solve` and `place`.
    pub theta_true: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ShotPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_step: Option<TwoStepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementConfig>,
    /// Directory for CSV/JSON outputs; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Config file that failed to parse; reported with exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> std::result::Result<Self, ParseError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            let message = if field == "." {
                inner.to_string()
            } else {
                format!("field `{field}`: {inner}")
            };
            ParseError {
                path: origin.to_string(),
                message,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Ok(Self::from_json(&text, &path.display().to_string())?)
    }

    #[cfg(test)]
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        if let Some(plan) = &mut self.plan {
            plan.seed = seed;
        }
        if let Some(p) = &mut self.placement {
            p.seed = seed;
        }
    }

    pub fn build_model(&self) -> Result<FieldModel> {
        let model = match &self.model {
            ModelSpec::ExplicitLinear { gradient, offset } => {
                let d = gradient.len();
                if d == 0 {
                    bail!("model.gradient has no rows");
                }
                let k = gradient[0].len();
                if gradient.iter().any(|r| r.len() != k) {
                    bail!("model.gradient rows must all have the same length");
                }
                let g = DMatrix::from_fn(d, k, |i, j| gradient[i][j]);
                let c = offset
                    .clone()
                    .map(DVector::from_vec)
                    .unwrap_or_else(|| DVector::zeros(d));
                FieldModel::explicit_linear(g, c)?
            }
            ModelSpec::LinearBasis {
                positions,
                basis,
                monomial_degree,
            } => {
                let dim = positions.first().map_or(0, Vec::len);
                let basis = match (basis, monomial_degree) {
                    (Some(b), None) => b.clone(),
                    (None, Some(deg)) => BasisFunction::monomials(dim, *deg),
                    _ => bail!("model: give exactly one of `basis` and `monomial_degree`"),
                };
                FieldModel::linear_basis(positions.clone(), basis)?
            }
            ModelSpec::PointSources {
                positions,
                sources,
                mobile,
            } => FieldModel::point_sources(positions.clone(), sources.clone(), *mobile)?,
        };
        if model.param_dim() != self.theta_true.len() {
            bail!(
                "theta_true has {} entries but the model has {} parameters",
                self.theta_true.len(),
                model.param_dim()
            );
        }
        Ok(model)
    }

    pub fn plan(&self) -> Result<&ShotPlan> {
        self.plan.as_ref().context("config has no `plan` section")
    }

    pub fn two_step(&self) -> TwoStepConfig {
        self.two_step.clone().unwrap_or_default()
    }
}
