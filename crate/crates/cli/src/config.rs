//! TOML run configuration and its translation into core requests.

use std::path::{Path, PathBuf};

use calidesign::estimation::EstimateOptions;
use calidesign::fixtures;
use calidesign::model::{CostModel, Design, ModelParams, PowerSpec, UnitCosts};
use calidesign::optimizer::OptimizerConfig;
use calidesign::requests::{
    BudgetRequest, DesignRequest, EstimateRequest, PowerRequest, SensitivityRequest,
    SimulateRequest, SweepRequest, DEFAULT_MULTIPLIERS,
};
use calidesign::sweeps::SensitivityAxis;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Design,
    Budget,
    Power,
    Estimate,
    Simulate,
    Sweep,
    Sensitivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub c_q: Option<f64>,
    pub c_b: Option<f64>,
    pub c_total: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub alpha: Option<f64>,
    pub power: Option<f64>,
    pub delta: Option<f64>,
    /// Known SE of the group contrast, in place of groups and designs.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub input: Option<PathBuf>,
    pub r_delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    /// Empirical SE of the estimator against the closed form.
    #[default]
    Se,
    /// Empirical power of a two-group design.
    Power,
    /// Write one synthetic pilot dataset.
    Dataset,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub kind: Option<SimKind>,
    pub mu: Option<f64>,
    pub replications: Option<usize>,
    /// Per-replicate estimates are written here when set.
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub axis: Option<SensitivityAxis>,
    pub group: Option<u8>,
    pub multipliers: Option<Vec<f64>>,
}

/// Everything a run can be configured with. Sections a mode does not use are
/// ignored; missing ones it needs are reported by field name.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    /// Case-study preset supplying groups and unit costs.
    pub preset: Option<String>,
    pub groups: Option<Vec<ModelParams>>,
    #[serde(default)]
    pub costs: CostSection,
    #[serde(default)]
    pub power: PowerSection,
    pub designs: Option<Vec<Design>>,
    /// Replicate count to force per group; 0 leaves a group free.
    pub fixed_k: Option<Vec<u64>>,
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    pub sweep: Option<SweepRequest>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
}

pub const DEFAULT_SEED: u64 = 20_240_101;
pub const DEFAULT_REPLICATIONS: usize = 1_000;

impl RunConfig {
    /// Reads a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.estimate.input);
        resolve(&mut config.simulate.dump);
        resolve(&mut config.output);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| CliError::Usage(format!("invalid TOML: {e}")))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().trim_end().to_string();
            if path == "." {
                CliError::Usage(format!("config: {message}"))
            } else {
                CliError::Usage(format!("config field {path}: {message}"))
            }
        })
    }

    /// Fills groups and unit costs from the preset where not given explicitly.
    pub fn apply_preset(&mut self) -> Result<(), CliError> {
        let Some(name) = &self.preset else {
            return Ok(());
        };
        let study = fixtures::by_name(name).map_err(CliError::from)?;
        if self.groups.is_none() {
            self.groups = Some(study.params.to_vec());
        }
        self.costs.c_q.get_or_insert(study.unit.c_q);
        self.costs.c_b.get_or_insert(study.unit.c_b);
        Ok(())
    }

    fn groups(&self, mode: &str) -> Result<Vec<ModelParams>, CliError> {
        self.groups
            .clone()
            .ok_or_else(|| missing(mode, "groups", "add [[groups]] tables or use --preset"))
    }

    fn two_groups(&self, mode: &str) -> Result<[ModelParams; 2], CliError> {
        let groups = self.groups(mode)?;
        <[ModelParams; 2]>::try_from(groups).map_err(|g| {
            CliError::Usage(format!(
                "{mode}: groups must list exactly 2 groups, found {}",
                g.len()
            ))
        })
    }

    fn unit_costs(&self, mode: &str) -> Result<UnitCosts, CliError> {
        let c_q = self
            .costs
            .c_q
            .ok_or_else(|| missing(mode, "costs.c_q", "or pass --c-q"))?;
        let c_b = self
            .costs
            .c_b
            .ok_or_else(|| missing(mode, "costs.c_b", "or pass --c-b"))?;
        Ok(UnitCosts { c_q, c_b })
    }

    fn cost_model(&self, mode: &str) -> Result<CostModel, CliError> {
        let unit = self.unit_costs(mode)?;
        let c_total = self
            .costs
            .c_total
            .ok_or_else(|| missing(mode, "costs.c_total", "or pass --budget"))?;
        Ok(CostModel {
            c_q: unit.c_q,
            c_b: unit.c_b,
            c_total,
        })
    }

    fn power_spec(&self, mode: &str) -> Result<PowerSpec, CliError> {
        Ok(PowerSpec {
            alpha: self.power.alpha.unwrap_or(0.05),
            power: self.power.power.unwrap_or(0.8),
            delta: self
                .power
                .delta
                .ok_or_else(|| missing(mode, "power.delta", "or pass --delta"))?,
            mu0: 0.0,
        })
    }

    fn designs(&self, mode: &str) -> Result<Vec<Design>, CliError> {
        self.designs.clone().ok_or_else(|| {
            missing(
                mode,
                "designs",
                "add [[designs]] tables or pass --design N,n,K",
            )
        })
    }

    fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn design_request(&self) -> Result<DesignRequest, CliError> {
        Ok(DesignRequest {
            groups: self.groups("design")?,
            costs: self.cost_model("design")?,
            fixed_k: self
                .fixed_k
                .iter()
                .flatten()
                .map(|&k| (k > 0).then_some(k))
                .collect(),
            optimizer: self.optimizer(),
        })
    }

    pub fn budget_request(&self) -> Result<BudgetRequest, CliError> {
        Ok(BudgetRequest {
            groups: self.two_groups("budget")?,
            unit_costs: self.unit_costs("budget")?,
            power: self.power_spec("budget")?,
            optimizer: self.optimizer(),
        })
    }

    pub fn power_request(&self) -> Result<PowerRequest, CliError> {
        let spec = self.power_spec("power")?;
        let (groups, designs) = match self.power.se {
            Some(_) => (Vec::new(), Vec::new()),
            None => (self.groups("power")?, self.designs("power")?),
        };
        Ok(PowerRequest {
            groups,
            designs,
            se: self.power.se,
            alpha: spec.alpha,
            delta: spec.delta,
            target_power: self.power.power,
        })
    }

    pub fn estimate_request(&self) -> Result<EstimateRequest, CliError> {
        let path = self
            .estimate
            .input
            .as_ref()
            .ok_or_else(|| missing("estimate", "estimate.input", "or pass --input"))?;
        let pilot_csv = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read pilot data {}: {e}", path.display()))
        })?;
        Ok(EstimateRequest {
            pilot_csv,
            options: EstimateOptions {
                r_delta: self.estimate.r_delta,
            },
        })
    }

    pub fn sim_kind(&self) -> SimKind {
        self.simulate.kind.unwrap_or_default()
    }

    pub fn simulate_request(&self) -> Result<SimulateRequest, CliError> {
        let replications = self.simulate.replications.unwrap_or(DEFAULT_REPLICATIONS);
        let mu = self.simulate.mu.unwrap_or(0.0);
        match self.sim_kind() {
            SimKind::Se | SimKind::Dataset => {
                let groups = self.groups("simulate")?;
                let designs = self.designs("simulate")?;
                Ok(SimulateRequest::Se {
                    params: groups[0],
                    design: designs[0],
                    mu,
                    replications,
                    seed: self.seed(),
                })
            }
            SimKind::Power => {
                let designs = self.designs("simulate")?;
                let designs = <[Design; 2]>::try_from(designs).map_err(|d| {
                    CliError::Usage(format!(
                        "simulate: power needs exactly 2 designs, found {}",
                        d.len()
                    ))
                })?;
                Ok(SimulateRequest::Power {
                    groups: self.two_groups("simulate")?,
                    designs,
                    mu1: mu,
                    replications,
                    seed: self.seed(),
                    power: self.power_spec("simulate")?,
                })
            }
        }
    }

    pub fn sensitivity_request(&self) -> Result<SensitivityRequest, CliError> {
        Ok(SensitivityRequest {
            groups: self.two_groups("sensitivity")?,
            costs: self.cost_model("sensitivity")?,
            axis: self
                .sensitivity
                .axis
                .ok_or_else(|| missing("sensitivity", "sensitivity.axis", "or pass --axis"))?,
            group: self.sensitivity.group.unwrap_or(1),
            multipliers: self
                .sensitivity
                .multipliers
                .clone()
                .unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec()),
            optimizer: self.optimizer(),
        })
    }

    pub fn sweep_request(&self) -> Result<SweepRequest, CliError> {
        self.sweep.clone().ok_or_else(|| {
            missing(
                "sweep",
                "sweep",
                "add a [sweep] table or pass --r-cb for a threshold scan",
            )
        })
    }
}

fn missing(mode: &str, field: &str, hint: &str) -> CliError {
    CliError::Usage(format!("{mode}: missing {field} ({hint})"))
}
