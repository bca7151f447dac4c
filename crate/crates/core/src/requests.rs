//! Request and response types shared by the command-line tool and the HTTP
//! service, so both produce the same numbers from the same inputs.
//!
//! Every response is wrapped in an [`Envelope`] echoing the inputs, collecting
//! warnings and naming the units of the result fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate_all, EstimateOptions, ParamEstimates};
use crate::model::{
    power_one_group, power_two_group, se_target, var_mu_hat, CostModel, Design, ModelParams,
    PowerSpec, UnitCosts,
};
use crate::optimizer::{
    minimize_budget, optimize_single_group_with_k, optimize_two_groups_with_k, BudgetSearch,
    DesignReport, OptimizerConfig, TwoGroupReport,
};
use crate::pilot::PilotDataset;
use crate::simulation::{
    monte_carlo_power, monte_carlo_se, MonteCarloPower, MonteCarloSe, SimSpec, TwoGroupSimSpec,
};
use crate::sweeps::{
    se_surface, sensitivity_scan, threshold_scan, SensitivityAxis, SensitivityRow, SurfaceRow,
    SweepGrid, SweepTable, ThresholdRow,
};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: String,
    pub inputs: serde_json::Value,
    pub result: T,
    pub warnings: Vec<String>,
    pub units: BTreeMap<String, String>,
}

/// A validated computation with a fixed result type.
pub trait Request: Serialize {
    type Output: Serialize;

    /// Result plus any warnings not already attached to it.
    fn execute(&self) -> Result<(Self::Output, Vec<String>)>;

    fn units(&self) -> &'static [(&'static str, &'static str)];
}

/// Runs a request and wraps the result.
pub fn run<R: Request>(request: &R) -> Result<Envelope<R::Output>> {
    let (result, extra) = request.execute()?;
    let value =
        serde_json::to_value(&result).map_err(|e| Error::invalid("result", e.to_string()))?;
    let mut warnings = Vec::new();
    collect_warnings(&value, &mut warnings);
    for w in extra {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    Ok(Envelope {
        schema_version: SCHEMA_VERSION.into(),
        inputs: serde_json::to_value(request)
            .map_err(|e| Error::invalid("inputs", e.to_string()))?,
        result,
        warnings,
        units: request
            .units()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    })
}

// every nested `warnings` array, deduplicated, in document order
fn collect_warnings(value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                if k == "warnings" {
                    for w in v
                        .as_array()
                        .into_iter()
                        .flatten()
                        .filter_map(|w| w.as_str())
                    {
                        if !out.iter().any(|o| o == w) {
                            out.push(w.to_string());
                        }
                    }
                } else {
                    collect_warnings(v, out);
                }
            }
        }
        serde_json::Value::Array(items) => items.iter().for_each(|v| collect_warnings(v, out)),
        _ => {}
    }
}

/// Prefixes the field path of a validation error.
fn at(prefix: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidInput { field, reason } => Error::InvalidInput {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

fn check_group_count<T>(field: &str, items: &[T]) -> Result<()> {
    if items.is_empty() || items.len() > 2 {
        return Err(Error::invalid(
            field,
            format!("expected 1 or 2 groups, got {}", items.len()),
        ));
    }
    Ok(())
}

const DESIGN_UNITS: &[(&str, &str)] = &[
    ("achieved_variance", "squared outcome units"),
    ("achieved_se", "outcome units"),
    ("total_variance", "squared outcome units"),
    ("se_combined", "outcome units"),
    ("budget", "currency"),
    ("spent_budget", "currency"),
    ("slack_budget", "currency"),
    ("c_total", "currency"),
    ("allocation", "fraction of budget to group 1"),
    ("sampling_fraction", "n/N"),
];

/// Optimal design for one or two groups at a fixed budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRequest {
    pub groups: Vec<ModelParams>,
    pub costs: CostModel,
    /// Replicate count to force per group.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_k: Vec<Option<u64>>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignResult {
    Single(DesignReport),
    TwoGroups(Box<TwoGroupReport>),
}

impl Request for DesignRequest {
    type Output = DesignResult;

    fn execute(&self) -> Result<(DesignResult, Vec<String>)> {
        check_group_count("groups", &self.groups)?;
        self.costs.validate().map_err(at("costs"))?;
        self.optimizer.validate().map_err(at("optimizer"))?;
        if !self.fixed_k.is_empty() && self.fixed_k.len() != self.groups.len() {
            return Err(Error::invalid("fixed_k", "needs one entry per group"));
        }
        let k = |i: usize| self.fixed_k.get(i).copied().flatten();
        let result = match self.groups.as_slice() {
            [p] => DesignResult::Single(optimize_single_group_with_k(
                p,
                &self.costs,
                &self.optimizer,
                k(0),
            )?),
            [p1, p2] => DesignResult::TwoGroups(Box::new(optimize_two_groups_with_k(
                p1,
                p2,
                &self.costs,
                &self.optimizer,
                [k(0), k(1)],
            )?)),
            _ => unreachable!("group count checked"),
        };
        Ok((result, Vec::new()))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        DESIGN_UNITS
    }
}

/// Smallest budget meeting a power target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetRequest {
    pub groups: [ModelParams; 2],
    pub unit_costs: UnitCosts,
    pub power: PowerSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl Request for BudgetRequest {
    type Output = BudgetSearch;

    fn execute(&self) -> Result<(BudgetSearch, Vec<String>)> {
        self.unit_costs.validate().map_err(at("unit_costs"))?;
        self.power.validate().map_err(at("power"))?;
        self.optimizer.validate().map_err(at("optimizer"))?;
        let search = minimize_budget(
            &self.groups[0],
            &self.groups[1],
            &self.unit_costs,
            &self.power,
            &self.optimizer,
        )?;
        Ok((search, Vec::new()))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("budget", "currency"),
            ("initial_budget", "currency"),
            ("se_target", "outcome units"),
            ("se", "outcome units"),
            ("report", "see design"),
        ]
    }
}

/// Power of a given design. With one group the test is of `μ = μ₀` against a
/// shift of `delta`; with two it is of `μ₂ = μ₁`. A known `se` of the
/// contrast can stand in for groups and designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRequest {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<ModelParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub designs: Vec<Design>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub alpha: f64,
    pub delta: f64,
    /// When given, the SE this power would need is reported too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub variances: Vec<f64>,
    pub se: f64,
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meets_target: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Request for PowerRequest {
    type Output = PowerResult;

    fn execute(&self) -> Result<(PowerResult, Vec<String>)> {
        let spec = PowerSpec {
            alpha: self.alpha,
            power: self.target_power.unwrap_or(0.8),
            delta: self.delta,
            mu0: 0.0,
        };
        spec.validate()?;
        let target = self.target_power.map(|_| se_target(&spec));
        if let Some(se) = self.se {
            if !self.groups.is_empty() || !self.designs.is_empty() {
                return Err(Error::invalid(
                    "se",
                    "give either se or groups with designs, not both",
                ));
            }
            if !(se.is_finite() && se > 0.0) {
                return Err(Error::invalid("se", "must be positive and finite"));
            }
            let result = PowerResult {
                variances: Vec::new(),
                se,
                power: power_two_group(se, &spec)?,
                se_target: target,
                meets_target: target.map(|t| se <= t),
                warnings: Vec::new(),
            };
            return Ok((result, Vec::new()));
        }
        check_group_count("groups", &self.groups)?;
        if self.designs.len() != self.groups.len() {
            return Err(Error::invalid("designs", "needs one design per group"));
        }
        let mut warnings = Vec::new();
        let mut variances = Vec::new();
        for (i, (p, d)) in self.groups.iter().zip(&self.designs).enumerate() {
            variances.push(var_mu_hat(p, d).map_err(|e| match e {
                Error::InvalidInput { .. } => at(&format!("designs[{i}]"))(e),
                other => Error::invalid(format!("designs[{i}]"), other.to_string()),
            })?);
            warnings.extend(d.warnings());
        }
        let total: f64 = variances.iter().sum();
        let power = if variances.len() == 1 {
            power_one_group(total, self.delta, &spec)?
        } else {
            power_two_group(total.sqrt(), &spec)?
        };
        Ok((
            PowerResult {
                variances,
                se: total.sqrt(),
                power,
                se_target: target,
                meets_target: target.map(|t| total.sqrt() <= t),
                warnings,
            },
            Vec::new(),
        ))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("variances", "squared outcome units"),
            ("se", "outcome units"),
            ("se_target", "outcome units"),
            ("power", "probability"),
        ]
    }
}

/// Parameter estimates from a pilot dataset in the long text format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    pub pilot_csv: String,
    #[serde(default)]
    pub options: EstimateOptions,
}

impl Request for EstimateRequest {
    type Output = ParamEstimates;

    fn execute(&self) -> Result<(ParamEstimates, Vec<String>)> {
        let data = PilotDataset::parse(&self.pilot_csv)?;
        Ok((estimate_all(&data, &self.options)?, Vec::new()))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("alpha0", "outcome units"),
            ("alpha1", "dimensionless"),
            ("sigma2_eps", "squared outcome units"),
            ("sigma2_phi", "squared outcome units"),
            ("sigma2_delta", "squared outcome units"),
            ("r_delta", "dimensionless"),
            ("r_phi", "dimensionless"),
            ("mu_hat", "outcome units"),
        ]
    }
}

pub const DEFAULT_MULTIPLIERS: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

fn default_multipliers() -> Vec<f64> {
    DEFAULT_MULTIPLIERS.to_vec()
}

fn default_group() -> u8 {
    1
}

/// Efficiency of designs built on a misstated parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityRequest {
    pub groups: [ModelParams; 2],
    pub costs: CostModel,
    pub axis: SensitivityAxis,
    /// Group whose parameter is misstated.
    #[serde(default = "default_group")]
    pub group: u8,
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl Request for SensitivityRequest {
    type Output = Vec<SensitivityRow>;

    fn execute(&self) -> Result<(Vec<SensitivityRow>, Vec<String>)> {
        self.costs.validate().map_err(at("costs"))?;
        self.optimizer.validate().map_err(at("optimizer"))?;
        let rows = sensitivity_scan(
            self.groups,
            self.group,
            self.axis,
            &self.multipliers,
            &self.costs,
            &self.optimizer,
        )?;
        Ok((rows, Vec::new()))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("efficiency", "SE ratio, optimal over achieved"),
            ("variance_ratio", "variance ratio, optimal over achieved"),
            ("allocation", "fraction of budget to group 1"),
        ]
    }
}

/// One of the sweep kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepRequest {
    Grid {
        grid: SweepGrid,
        #[serde(default)]
        optimizer: OptimizerConfig,
    },
    Thresholds {
        r_cb: Vec<f64>,
        r_phi: f64,
        r_c: f64,
        #[serde(default)]
        optimizer: OptimizerConfig,
    },
    Surface {
        sigma2_eps: f64,
        n_total: u64,
        n_direct: Vec<u64>,
        k_reps: Vec<u64>,
        r_delta: Vec<f64>,
        r_phi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "snake_case")]
pub enum SweepResult {
    Grid(SweepTable),
    Thresholds(Vec<ThresholdRow>),
    Surface(Vec<SurfaceRow>),
}

impl Request for SweepRequest {
    type Output = SweepResult;

    fn execute(&self) -> Result<(SweepResult, Vec<String>)> {
        let result = match self {
            SweepRequest::Grid { grid, optimizer } => {
                optimizer.validate().map_err(at("optimizer"))?;
                SweepResult::Grid(grid.run(optimizer).map_err(at("grid"))?)
            }
            SweepRequest::Thresholds {
                r_cb,
                r_phi,
                r_c,
                optimizer,
            } => {
                optimizer.validate().map_err(at("optimizer"))?;
                SweepResult::Thresholds(threshold_scan(r_cb, *r_phi, *r_c, optimizer)?)
            }
            SweepRequest::Surface {
                sigma2_eps,
                n_total,
                n_direct,
                k_reps,
                r_delta,
                r_phi,
            } => SweepResult::Surface(se_surface(
                *sigma2_eps,
                *n_total,
                n_direct,
                k_reps,
                r_delta,
                *r_phi,
            )?),
        };
        Ok((result, Vec::new()))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("variance", "squared outcome units"),
            ("se", "outcome units"),
            ("k1_to_2", "r_delta"),
            ("k2_to_3", "r_delta"),
            ("full_sampling", "r_delta"),
        ]
    }
}

/// Monte Carlo check of the closed-form SE, or of the power of a two-group
/// design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulateRequest {
    Se {
        params: ModelParams,
        design: Design,
        mu: f64,
        replications: usize,
        seed: u64,
    },
    Power {
        groups: [ModelParams; 2],
        designs: [Design; 2],
        mu1: f64,
        replications: usize,
        seed: u64,
        power: PowerSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulateResult {
    Se(MonteCarloSe),
    Power(MonteCarloPower),
}

impl Request for SimulateRequest {
    type Output = SimulateResult;

    fn execute(&self) -> Result<(SimulateResult, Vec<String>)> {
        Ok((
            match *self {
                SimulateRequest::Se {
                    params,
                    design,
                    mu,
                    replications,
                    seed,
                } => SimulateResult::Se(monte_carlo_se(&SimSpec {
                    params,
                    design,
                    mu,
                    replications,
                    seed,
                })?),
                SimulateRequest::Power {
                    groups,
                    designs,
                    mu1,
                    replications,
                    seed,
                    power,
                } => SimulateResult::Power(monte_carlo_power(
                    &TwoGroupSimSpec {
                        params: groups,
                        designs,
                        mu1,
                        replications,
                        seed,
                    },
                    &power,
                )?),
            },
            Vec::new(),
        ))
    }

    fn units(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("empirical_se", "outcome units"),
            ("closed_form_se", "outcome units"),
            ("mc_error", "outcome units"),
            ("rejection_rate", "probability"),
        ]
    }
}
