//! Measurement-error model parameters, study designs, costs and the closed-form
//! variance and power expressions built on them.
//!
//! Every participant gives an indirect measurement `Q = α₀ + α₁T + φ`; a
//! calibration subsample of `n` out of `N` participants additionally gives `K`
//! replicate direct measurements `M = T + δ`, with `T = μ + ε`. The design
//! problem only depends on the population variance `σ²_ε` and the two ratios
//! `r_δ = σ²_δ/σ²_ε` and `r_φ = σ²_φ/(α₁²σ²_ε)`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Smallest calibration subsample for which the variance of `μ̂` is finite.
pub const MIN_SUBSAMPLE: u64 = 4;

/// Below this calibration size normal-approximation standard errors are fragile.
pub const FRAGILE_SUBSAMPLE: u64 = 10;

const RAW_CONSISTENCY_TOL: f64 = 1e-9;

/// Raw model parameters, present when the parameters came from a fitted model
/// rather than from planning ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub sigma2_phi: f64,
    pub sigma2_delta: f64,
}

/// Population and measurement-error parameters for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParamsInput", into = "ModelParamsInput")]
pub struct ModelParams {
    sigma2_eps: f64,
    r_delta: f64,
    r_phi: f64,
    raw: Option<RawParams>,
}

impl ModelParams {
    /// Parameters given as the population variance plus the two error ratios.
    pub fn new(sigma2_eps: f64, r_delta: f64, r_phi: f64) -> Result<Self> {
        check_positive("sigma2_eps", sigma2_eps)?;
        check_non_negative("r_delta", r_delta)?;
        check_non_negative("r_phi", r_phi)?;
        Ok(Self {
            sigma2_eps,
            r_delta,
            r_phi,
            raw: None,
        })
    }

    /// Parameters given on the raw scale; the ratios are derived.
    pub fn from_raw(
        alpha0: f64,
        alpha1: f64,
        sigma2_eps: f64,
        sigma2_phi: f64,
        sigma2_delta: f64,
    ) -> Result<Self> {
        check_positive("sigma2_eps", sigma2_eps)?;
        check_finite("alpha0", alpha0)?;
        check_finite("alpha1", alpha1)?;
        if alpha1 == 0.0 {
            return Err(Error::invalid("alpha1", "must be non-zero"));
        }
        check_non_negative("sigma2_phi", sigma2_phi)?;
        check_non_negative("sigma2_delta", sigma2_delta)?;
        Ok(Self {
            sigma2_eps,
            r_delta: sigma2_delta / sigma2_eps,
            r_phi: sigma2_phi / (alpha1 * alpha1 * sigma2_eps),
            raw: Some(RawParams {
                alpha0,
                alpha1,
                sigma2_phi,
                sigma2_delta,
            }),
        })
    }

    pub fn sigma2_eps(&self) -> f64 {
        self.sigma2_eps
    }

    pub fn r_delta(&self) -> f64 {
        self.r_delta
    }

    pub fn r_phi(&self) -> f64 {
        self.r_phi
    }

    pub fn raw(&self) -> Option<&RawParams> {
        self.raw.as_ref()
    }

    /// Raw parameters, or the canonical ones (`α₀ = 0`, `α₁ = 1`) reproducing
    /// the ratios when none were supplied.
    pub fn raw_or_canonical(&self) -> RawParams {
        self.raw.unwrap_or(RawParams {
            alpha0: 0.0,
            alpha1: 1.0,
            sigma2_phi: self.r_phi * self.sigma2_eps,
            sigma2_delta: self.r_delta * self.sigma2_eps,
        })
    }

    /// Copy with the population variance rescaled and both ratios held fixed.
    /// Raw parameters are dropped since they no longer match.
    pub fn with_sigma2_eps(&self, sigma2_eps: f64) -> Result<Self> {
        Self::new(sigma2_eps, self.r_delta, self.r_phi)
    }

    pub fn with_r_delta(&self, r_delta: f64) -> Result<Self> {
        Self::new(self.sigma2_eps, r_delta, self.r_phi)
    }

    pub fn with_r_phi(&self, r_phi: f64) -> Result<Self> {
        Self::new(self.sigma2_eps, self.r_delta, r_phi)
    }
}

/// Wire form of [`ModelParams`]: either ratios, raw parameters, or both (in
/// which case they must agree).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParamsInput {
    pub sigma2_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_delta: Option<f64>,
}

impl TryFrom<ModelParamsInput> for ModelParams {
    type Error = Error;

    fn try_from(input: ModelParamsInput) -> Result<Self> {
        let s2 = input.sigma2_eps;
        check_positive("sigma2_eps", s2)?;

        let r_delta = match (input.r_delta, input.sigma2_delta) {
            (Some(r), Some(sd)) => {
                check_non_negative("sigma2_delta", sd)?;
                check_consistent("r_delta", r, sd / s2)?;
                r
            }
            (Some(r), None) => r,
            (None, Some(sd)) => {
                check_non_negative("sigma2_delta", sd)?;
                sd / s2
            }
            (None, None) => {
                return Err(Error::invalid("r_delta", "required (or give sigma2_delta)"))
            }
        };

        let derived_r_phi = match (input.sigma2_phi, input.alpha1) {
            (Some(sp), Some(a1)) => {
                check_non_negative("sigma2_phi", sp)?;
                check_finite("alpha1", a1)?;
                if a1 == 0.0 {
                    return Err(Error::invalid("alpha1", "must be non-zero"));
                }
                Some(sp / (a1 * a1 * s2))
            }
            _ => None,
        };
        let r_phi = match (input.r_phi, derived_r_phi) {
            (Some(r), Some(d)) => {
                check_consistent("r_phi", r, d)?;
                r
            }
            (Some(r), None) => r,
            (None, Some(d)) => d,
            (None, None) => {
                return Err(Error::invalid(
                    "r_phi",
                    "required (or give sigma2_phi and alpha1)",
                ))
            }
        };

        let mut params = ModelParams::new(s2, r_delta, r_phi)?;
        if let (Some(alpha0), Some(alpha1), Some(sigma2_phi), Some(sigma2_delta)) = (
            input.alpha0,
            input.alpha1,
            input.sigma2_phi,
            input.sigma2_delta,
        ) {
            check_finite("alpha0", alpha0)?;
            params.raw = Some(RawParams {
                alpha0,
                alpha1,
                sigma2_phi,
                sigma2_delta,
            });
        }
        Ok(params)
    }
}

impl From<ModelParams> for ModelParamsInput {
    fn from(p: ModelParams) -> Self {
        let raw = p.raw;
        ModelParamsInput {
            sigma2_eps: p.sigma2_eps,
            r_delta: Some(p.r_delta),
            r_phi: Some(p.r_phi),
            alpha0: raw.map(|r| r.alpha0),
            alpha1: raw.map(|r| r.alpha1),
            sigma2_phi: raw.map(|r| r.sigma2_phi),
            sigma2_delta: raw.map(|r| r.sigma2_delta),
        }
    }
}

/// Per-participant and per-direct-measurement costs, without a total budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitCosts {
    /// Recruitment plus indirect measurement, per participant.
    pub c_q: f64,
    /// One direct measurement.
    pub c_b: f64,
}

impl UnitCosts {
    pub fn new(c_q: f64, c_b: f64) -> Result<Self> {
        let unit = Self { c_q, c_b };
        unit.validate()?;
        Ok(unit)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("c_q", self.c_q)?;
        check_positive("c_b", self.c_b)
    }

    pub fn r_cb(&self) -> f64 {
        self.c_b / self.c_q
    }

    pub fn with_budget(&self, c_total: f64) -> Result<CostModel> {
        CostModel::new(self.c_q, self.c_b, c_total)
    }

    /// Cheapest budget admitting any design (`N = n = 4`, `K = 1`).
    pub fn minimal_budget(&self) -> f64 {
        MIN_SUBSAMPLE as f64 * (self.c_b + self.c_q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c_q: f64,
    pub c_b: f64,
    /// Total budget.
    pub c_total: f64,
}

impl CostModel {
    pub fn new(c_q: f64, c_b: f64, c_total: f64) -> Result<Self> {
        let cost = Self { c_q, c_b, c_total };
        cost.validate()?;
        Ok(cost)
    }

    pub fn validate(&self) -> Result<()> {
        self.unit().validate()?;
        check_positive("c_total", self.c_total)?;
        Ok(())
    }

    pub fn unit(&self) -> UnitCosts {
        UnitCosts {
            c_q: self.c_q,
            c_b: self.c_b,
        }
    }

    pub fn r_cb(&self) -> f64 {
        self.c_b / self.c_q
    }

    pub fn r_c(&self) -> f64 {
        self.c_total / self.c_q
    }

    pub fn cost_of(&self, design: &Design) -> f64 {
        design.cost(&self.unit())
    }
}

/// Sample sizes for one group: `N` participants, `n` of whom get `K`
/// replicate direct measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    pub n_total: u64,
    pub n_direct: u64,
    pub k_reps: u64,
}

impl Design {
    pub fn new(n_total: u64, n_direct: u64, k_reps: u64) -> Result<Self> {
        let design = Self {
            n_total,
            n_direct,
            k_reps,
        };
        design.validate()?;
        Ok(design)
    }

    /// Full sampling: every participant gets direct measurements.
    pub fn full(n: u64, k_reps: u64) -> Result<Self> {
        Self::new(n, n, k_reps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_direct < MIN_SUBSAMPLE {
            return Err(Error::SubsampleTooSmall { n: self.n_direct });
        }
        if self.n_direct > self.n_total {
            return Err(Error::Constraint(format!(
                "calibration subsample n = {} exceeds N = {}",
                self.n_direct, self.n_total
            )));
        }
        if self.k_reps < 1 {
            return Err(Error::Constraint("K must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cost(&self, unit: &UnitCosts) -> f64 {
        (self.n_direct * self.k_reps) as f64 * unit.c_b + self.n_total as f64 * unit.c_q
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.n_direct as f64 / self.n_total as f64
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.n_direct < FRAGILE_SUBSAMPLE {
            vec![format!(
                "calibration subsample n = {} is below {}; normal-approximation standard errors are fragile",
                self.n_direct, FRAGILE_SUBSAMPLE
            )]
        } else {
            Vec::new()
        }
    }
}

/// Designs for a two-group study and the fraction of the budget given to group 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoGroupDesign {
    pub group1: Design,
    pub group2: Design,
    pub allocation: f64,
}

impl TwoGroupDesign {
    pub fn designs(&self) -> [Design; 2] {
        [self.group1, self.group2]
    }

    pub fn cost(&self, unit: &UnitCosts) -> f64 {
        self.group1.cost(unit) + self.group2.cost(unit)
    }
}

/// Significance level, target power and effect size of a planned test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSpec {
    /// Two-sided significance level.
    pub alpha: f64,
    /// Target power.
    pub power: f64,
    /// Effect size `|μ₂ − μ₁|`.
    pub delta: f64,
    /// Null value for one-group tests.
    #[serde(default)]
    pub mu0: f64,
}

impl PowerSpec {
    pub fn new(alpha: f64, power: f64, delta: f64) -> Result<Self> {
        let spec = Self {
            alpha,
            power,
            delta,
            mu0: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("alpha", self.alpha)?;
        check_probability("power", self.power)?;
        check_positive("delta", self.delta)?;
        check_finite("mu0", self.mu0)
    }

    /// Critical value `z_{1−α/2}`.
    pub fn z_alpha(&self) -> f64 {
        normal_quantile(1.0 - self.alpha / 2.0)
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Variance of the maximum-likelihood estimator of `μ` for one group.
pub fn var_mu_hat(params: &ModelParams, design: &Design) -> Result<f64> {
    design.validate()?;
    let big_n = design.n_total as f64;
    let n = design.n_direct as f64;
    let k = design.k_reps as f64;
    let replicate_term = (big_n * n - 2.0 * big_n - n) * (1.0 + params.r_delta / k);
    let indirect_term = (big_n - n) * (n - 2.0) / (1.0 + params.r_phi);
    Ok(params.sigma2_eps / (big_n * n * (n - 3.0)) * (replicate_term - indirect_term))
}

/// Variance when every participant gets `K` direct measurements and the budget
/// is spent as a continuous quantity: `σ²_ε/C · (C_Q r_δ/K + K C_B + C_Q + C_B r_δ)`.
pub fn var_mu_full_sampling(params: &ModelParams, cost: &CostModel, k_reps: u64) -> Result<f64> {
    if k_reps < 1 {
        return Err(Error::Constraint("K must be at least 1".into()));
    }
    let per_subject = k_reps as f64 * cost.c_b + cost.c_q;
    let affordable = (cost.c_total / per_subject).floor();
    if affordable < MIN_SUBSAMPLE as f64 {
        return Err(Error::InfeasibleBudget {
            budget: cost.c_total,
            minimal: MIN_SUBSAMPLE as f64 * per_subject,
        });
    }
    let k = k_reps as f64;
    let r = params.r_delta;
    Ok(params.sigma2_eps / cost.c_total
        * (cost.c_q * r / k + k * cost.c_b + cost.c_q + cost.c_b * r))
}

/// Variance with `N` chosen to exhaust the budget, `N = r_C − nK r_CB`, written
/// in terms of the cost ratios. `N` is not rounded.
pub fn var_mu_budget_form(
    params: &ModelParams,
    cost: &CostModel,
    n_direct: u64,
    k_reps: u64,
) -> Result<f64> {
    if n_direct < MIN_SUBSAMPLE {
        return Err(Error::SubsampleTooSmall { n: n_direct });
    }
    if k_reps < 1 {
        return Err(Error::Constraint("K must be at least 1".into()));
    }
    let n = n_direct as f64;
    let k = k_reps as f64;
    let remaining = cost.r_c() - n * k * cost.r_cb();
    if remaining < n {
        return Err(Error::Constraint(format!(
            "budget funds only {remaining:.3} participants for a calibration subsample of {n_direct}"
        )));
    }
    let inv_rest = 1.0 / remaining;
    let replicate = ((n - 2.0) / n - inv_rest) * (1.0 + params.r_delta / k);
    let indirect = (n - 2.0) / (1.0 + params.r_phi) * (1.0 / n - inv_rest);
    Ok(params.sigma2_eps / (n - 3.0) * (replicate - indirect))
}

/// Approximate power of the two-sided test of `μ₂ = μ₁`:
/// `Φ(|Δ|/SE − z_{1−α/2})`, ignoring rejections in the wrong direction.
pub fn power_two_group(se_combined: f64, spec: &PowerSpec) -> Result<f64> {
    power_for_shift(se_combined, spec.delta, spec.alpha)
}

/// One-group analogue for `H₀: μ = μ₀` when the true mean is `mu`.
pub fn power_one_group(variance: f64, mu: f64, spec: &PowerSpec) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::invalid("variance", "must be positive and finite"));
    }
    power_for_shift(variance.sqrt(), mu - spec.mu0, spec.alpha)
}

fn power_for_shift(se: f64, shift: f64, alpha: f64) -> Result<f64> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::invalid("se", "must be positive and finite"));
    }
    check_probability("alpha", alpha)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(normal_cdf(shift.abs() / se - z))
}

/// Largest standard error of the effect estimator meeting the power target.
pub fn se_target(spec: &PowerSpec) -> f64 {
    spec.delta.abs() / (spec.z_alpha() + normal_quantile(spec.power))
}

fn check_finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn check_non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be non-negative and finite, got {v}"),
        ))
    }
}

fn check_probability(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must lie strictly between 0 and 1, got {v}"),
        ))
    }
}

fn check_consistent(field: &str, given: f64, derived: f64) -> Result<()> {
    let scale = given.abs().max(derived.abs()).max(f64::MIN_POSITIVE);
    if (given - derived).abs() <= RAW_CONSISTENCY_TOL * scale {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("given value {given} disagrees with {derived} derived from the raw parameters"),
        ))
    }
}
