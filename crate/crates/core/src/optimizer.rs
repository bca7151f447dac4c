//! Integer design search.
//!
//! For a fixed calibration size `n` and replicate count `K` the variance is
//! monotone in `N`, so `N` is either `n` or whatever exhausts the budget and
//! the search runs over `(n, K)` only. `K` is bounded by the full-sampling
//! optimum plus [`OptimizerConfig::k_max_extra`]. Two-group allocations are
//! searched on a fixed grid because the objective is piecewise constant in the
//! allocation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    se_target, var_mu_hat, CostModel, Design, ModelParams, PowerSpec, TwoGroupDesign, UnitCosts,
    MIN_SUBSAMPLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Replicate counts searched above the full-sampling optimum.
    pub k_max_extra: u64,
    /// Step of the budget-fraction grid for two-group allocation.
    pub allocation_grid: f64,
    /// When non-zero, the bracket one grid step either side of the best
    /// allocation is re-searched at `allocation_grid / refine_subdivisions`.
    pub refine_subdivisions: u32,
    /// Relative variance difference below which two designs tie.
    pub tie_tolerance: f64,
    /// Largest accepted gap `|SE(C) − SE_target|`, in SE units.
    pub budget_tolerance: f64,
    pub max_iterations: usize,
    /// Relative variance gain from participants without direct measurements
    /// below which the sampling fraction is reported as 1.
    pub fraction_report_epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            k_max_extra: 2,
            allocation_grid: 0.01,
            refine_subdivisions: 0,
            tie_tolerance: 1e-12,
            budget_tolerance: 1e-5,
            max_iterations: 50,
            fraction_report_epsilon: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("allocation_grid", self.allocation_grid),
            ("tie_tolerance", self.tie_tolerance),
            ("budget_tolerance", self.budget_tolerance),
            ("fraction_report_epsilon", self.fraction_report_epsilon),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        if self.allocation_grid >= 0.5 {
            return Err(Error::invalid("allocation_grid", "must be below 0.5"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        Ok(())
    }

    /// Allocation grid points `i · step` strictly inside (0, 1), as
    /// `(index, fraction)`. The fraction is `i / steps` when the step divides 1
    /// so that budgets such as `0.48 · 50000` come out exact.
    fn allocation_points(&self) -> Vec<f64> {
        let step = self.allocation_grid;
        let steps = (1.0 / step).round();
        let divides = ((steps * step) - 1.0).abs() < 1e-12;
        let mut points = Vec::new();
        let mut i = 1u64;
        loop {
            let a = if divides {
                i as f64 / steps
            } else {
                i as f64 * step
            };
            if a >= 1.0 - 1e-12 {
                break;
            }
            points.push(a);
            i += 1;
        }
        points
    }
}

/// Optimal design for one group together with what it achieves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub design: Design,
    pub achieved_variance: f64,
    pub achieved_se: f64,
    /// `n/N` as designed.
    pub sampling_fraction: f64,
    /// `n/N`, reported as 1 when the participants without direct measurements
    /// reduce the variance by less than the configured epsilon.
    pub sampling_fraction_reported: f64,
    pub budget: f64,
    pub spent_budget: f64,
    pub slack_budget: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DesignReport {
    fn new(
        params: &ModelParams,
        unit: &UnitCosts,
        budget: f64,
        design: Design,
        config: &OptimizerConfig,
    ) -> Result<Self> {
        let variance = var_mu_hat(params, &design)?;
        let spent = design.cost(unit);
        Ok(Self {
            design,
            achieved_variance: variance,
            achieved_se: variance.sqrt(),
            sampling_fraction: design.sampling_fraction(),
            sampling_fraction_reported: reported_fraction(params, &design, variance, config)?,
            budget,
            spent_budget: spent,
            slack_budget: budget - spent,
            warnings: design.warnings(),
        })
    }
}

fn reported_fraction(
    params: &ModelParams,
    design: &Design,
    variance: f64,
    config: &OptimizerConfig,
) -> Result<f64> {
    if design.n_direct == design.n_total {
        return Ok(1.0);
    }
    let full = Design {
        n_total: design.n_direct,
        ..*design
    };
    let gain = (var_mu_hat(params, &full)? - variance) / variance;
    Ok(if gain < config.fraction_report_epsilon {
        1.0
    } else {
        design.sampling_fraction()
    })
}

/// Optimal two-group design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupReport {
    pub design: TwoGroupDesign,
    pub groups: [DesignReport; 2],
    pub total_variance: f64,
    pub se_combined: f64,
    pub c_total: f64,
    pub spent_budget: f64,
    pub slack_budget: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Largest `K ≥ 1` with `K(K−1) < r_δ/r_CB`: the best replicate count when
/// every participant is measured directly.
pub fn optimal_k_full_sampling(r_delta: f64, r_cb: f64) -> u64 {
    let ratio = r_delta / r_cb;
    let mut k = 1u64;
    while (((k + 1) * k) as f64) < ratio {
        k += 1;
    }
    k
}

/// Floor that forgives representation error just below an integer.
fn floor_tol(x: f64) -> f64 {
    (x + 1e-12 * x.abs().max(1.0)).floor()
}

/// Exhaustive search over `(n, K)`. For fixed `(n, K)` the variance is
/// monotone in `N` (decreasing exactly when `(n−2)/(1+r_φ) > 1 + r_δ/K`), so
/// only `N = n` and the `N` exhausting the budget are candidates. Returns
/// `None` when no design with `n ≥ 4` fits. Ties keep the earlier candidate:
/// smaller `K`, then smaller `n`, then smaller `N`.
fn search_single(
    params: &ModelParams,
    unit: &UnitCosts,
    budget: f64,
    k_values: impl Iterator<Item = u64>,
    tie_tolerance: f64,
) -> Option<(Design, f64)> {
    let mut best: Option<(Design, f64)> = None;
    let mut consider = |design: Design| {
        let v = variance_unchecked(params, &design);
        match best {
            Some((_, bv)) if v >= bv * (1.0 - tie_tolerance) => {}
            _ => best = Some((design, v)),
        }
    };
    for k in k_values {
        let per_subject = k as f64 * unit.c_b + unit.c_q;
        let n_max = floor_tol(budget / per_subject);
        if n_max < MIN_SUBSAMPLE as f64 {
            continue;
        }
        let n_max = n_max as u64;
        for n in MIN_SUBSAMPLE..=n_max {
            let exhausting = floor_tol((budget - (n * k) as f64 * unit.c_b) / unit.c_q) as u64;
            consider(Design {
                n_total: n,
                n_direct: n,
                k_reps: k,
            });
            if exhausting > n {
                consider(Design {
                    n_total: exhausting,
                    n_direct: n,
                    k_reps: k,
                });
            }
        }
    }
    best
}

#[inline]
fn variance_unchecked(params: &ModelParams, design: &Design) -> f64 {
    let big_n = design.n_total as f64;
    let n = design.n_direct as f64;
    let k = design.k_reps as f64;
    params.sigma2_eps() / (big_n * n * (n - 3.0))
        * ((big_n * n - 2.0 * big_n - n) * (1.0 + params.r_delta() / k)
            - (big_n - n) * (n - 2.0) / (1.0 + params.r_phi()))
}

fn k_values(
    params: &ModelParams,
    unit: &UnitCosts,
    config: &OptimizerConfig,
    fixed_k: Option<u64>,
) -> std::ops::RangeInclusive<u64> {
    match fixed_k {
        Some(k) => k..=k,
        None => 1..=optimal_k_full_sampling(params.r_delta(), unit.r_cb()) + config.k_max_extra,
    }
}

/// Feasible integer design minimizing `Var(μ̂)` for one group.
pub fn optimize_single_group(
    params: &ModelParams,
    cost: &CostModel,
    config: &OptimizerConfig,
) -> Result<DesignReport> {
    optimize_single_group_with_k(params, cost, config, None)
}

/// As [`optimize_single_group`], optionally forcing the replicate count.
pub fn optimize_single_group_with_k(
    params: &ModelParams,
    cost: &CostModel,
    config: &OptimizerConfig,
    fixed_k: Option<u64>,
) -> Result<DesignReport> {
    cost.validate()?;
    config.validate()?;
    if fixed_k == Some(0) {
        return Err(Error::invalid("k_reps", "must be at least 1"));
    }
    let unit = cost.unit();
    let ks = k_values(params, &unit, config, fixed_k);
    let (design, _) = search_single(params, &unit, cost.c_total, ks, config.tie_tolerance)
        .ok_or_else(|| Error::InfeasibleBudget {
            budget: cost.c_total,
            minimal: MIN_SUBSAMPLE as f64 * (fixed_k.unwrap_or(1) as f64 * unit.c_b + unit.c_q),
        })?;
    DesignReport::new(params, &unit, cost.c_total, design, config)
}

/// Best allocation of the budget between two groups and the optimal design in
/// each group given that allocation.
pub fn optimize_two_groups(
    params1: &ModelParams,
    params2: &ModelParams,
    cost: &CostModel,
    config: &OptimizerConfig,
) -> Result<TwoGroupReport> {
    optimize_two_groups_with_k(params1, params2, cost, config, [None, None])
}

/// As [`optimize_two_groups`], optionally forcing the replicate count in either group.
pub fn optimize_two_groups_with_k(
    params1: &ModelParams,
    params2: &ModelParams,
    cost: &CostModel,
    config: &OptimizerConfig,
    fixed_k: [Option<u64>; 2],
) -> Result<TwoGroupReport> {
    cost.validate()?;
    config.validate()?;
    if fixed_k.contains(&Some(0)) {
        return Err(Error::invalid("k_reps", "must be at least 1"));
    }
    let unit = cost.unit();
    let params = [*params1, *params2];
    let ks = [
        k_values(params1, &unit, config, fixed_k[0]),
        k_values(params2, &unit, config, fixed_k[1]),
    ];

    let evaluate = |a: f64| -> Option<Candidate> {
        let b1 = cost.c_total * a;
        let b2 = cost.c_total - b1;
        let (d1, v1) = search_single(&params[0], &unit, b1, ks[0].clone(), config.tie_tolerance)?;
        let (d2, v2) = search_single(&params[1], &unit, b2, ks[1].clone(), config.tie_tolerance)?;
        Some(Candidate {
            allocation: a,
            designs: [d1, d2],
            variance: v1 + v2,
        })
    };

    let points = config.allocation_points();
    let mut best = pick_best(
        points.par_iter().map(|&a| evaluate(a)).collect(),
        config.tie_tolerance,
    )
    .ok_or_else(|| Error::InfeasibleBudget {
        budget: cost.c_total,
        minimal: minimal_two_group_budget(&unit, &points, fixed_k),
    })?;

    if config.refine_subdivisions > 0 {
        let fine = config.allocation_grid / config.refine_subdivisions as f64;
        let span = config.refine_subdivisions as i64;
        let refined: Vec<Option<Candidate>> = (-span..=span)
            .into_par_iter()
            .map(|j| best.allocation + j as f64 * fine)
            .map(|a| {
                if a > 0.0 && a < 1.0 {
                    evaluate(a)
                } else {
                    None
                }
            })
            .collect();
        if let Some(r) = pick_best(refined, config.tie_tolerance) {
            if r.variance < best.variance * (1.0 - config.tie_tolerance) {
                best = r;
            }
        }
    }

    let budgets = [
        cost.c_total * best.allocation,
        cost.c_total * (1.0 - best.allocation),
    ];
    let g1 = DesignReport::new(&params[0], &unit, budgets[0], best.designs[0], config)?;
    let g2 = DesignReport::new(&params[1], &unit, budgets[1], best.designs[1], config)?;
    let total_variance = g1.achieved_variance + g2.achieved_variance;
    let spent = g1.spent_budget + g2.spent_budget;
    let mut warnings = g1.warnings.clone();
    warnings.extend(g2.warnings.iter().cloned());
    Ok(TwoGroupReport {
        design: TwoGroupDesign {
            group1: best.designs[0],
            group2: best.designs[1],
            allocation: best.allocation,
        },
        groups: [g1, g2],
        total_variance,
        se_combined: total_variance.sqrt(),
        c_total: cost.c_total,
        spent_budget: spent,
        slack_budget: cost.c_total - spent,
        warnings,
    })
}

struct Candidate {
    allocation: f64,
    designs: [Design; 2],
    variance: f64,
}

/// Lowest variance; ties go to the allocation nearest 0.5, then the smaller one.
fn pick_best(candidates: Vec<Option<Candidate>>, tie_tolerance: f64) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for c in candidates.into_iter().flatten() {
        let replace = match &best {
            None => true,
            Some(b) => {
                if c.variance < b.variance * (1.0 - tie_tolerance) {
                    true
                } else if c.variance <= b.variance * (1.0 + tie_tolerance) {
                    (c.allocation - 0.5).abs() < (b.allocation - 0.5).abs() - 1e-12
                } else {
                    false
                }
            }
        };
        if replace {
            best = Some(c);
        }
    }
    best
}

fn minimal_two_group_budget(unit: &UnitCosts, points: &[f64], fixed_k: [Option<u64>; 2]) -> f64 {
    let per_group =
        |k: Option<u64>| MIN_SUBSAMPLE as f64 * (k.unwrap_or(1) as f64 * unit.c_b + unit.c_q);
    let (m1, m2) = (per_group(fixed_k[0]), per_group(fixed_k[1]));
    points
        .iter()
        .map(|&a| (m1 / a).max(m2 / (1.0 - a)))
        .fold(f64::INFINITY, f64::min)
}

/// Starting budget for the power-driven search: both groups fully sampled,
/// budget split equally, `K` at its full-sampling optimum.
pub fn initial_budget(
    params1: &ModelParams,
    params2: &ModelParams,
    unit: &UnitCosts,
    se_target: f64,
) -> Result<f64> {
    unit.validate()?;
    if !(se_target > 0.0) || !se_target.is_finite() {
        return Err(Error::invalid("se_target", "must be positive and finite"));
    }
    let per_group = |p: &ModelParams| {
        let k = optimal_k_full_sampling(p.r_delta(), unit.r_cb()) as f64;
        let r = p.r_delta();
        p.sigma2_eps() * (unit.c_q * r / k + k * unit.c_b + unit.c_q + unit.c_b * r)
    };
    Ok(2.0 * (per_group(params1) + per_group(params2)) / (se_target * se_target))
}

/// One evaluation of the budget iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetStep {
    pub iteration: usize,
    pub budget: f64,
    pub se: f64,
    pub allocation: f64,
    /// True when this budget came from bisecting the bracket instead of the
    /// rescaling rule.
    #[serde(default)]
    pub bisected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSearch {
    pub budget: f64,
    pub se_target: f64,
    pub initial_budget: f64,
    /// Number of budget corrections after the initial evaluation.
    pub iterations: usize,
    pub trace: Vec<BudgetStep>,
    pub report: TwoGroupReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Smallest budget whose optimal two-group design meets the power target,
/// found by repeatedly rescaling `C ← (SE(C)/SE_target)² · C`.
///
/// The search stops once `SE ≤ SE_target` with a gap of at most
/// `budget_tolerance`. Integer designs make the SE a step function of the
/// budget, and for small budgets the steps can exceed the tolerance, so the
/// rescaling may bounce around the target. The loop therefore keeps the
/// largest budget seen to miss the target and the smallest seen to meet it.
/// A rescaled budget falling outside that bracket is replaced by its geometric
/// midpoint, and once the bracket is narrower than one indirect measurement
/// the feasible end is returned.
pub fn minimize_budget(
    params1: &ModelParams,
    params2: &ModelParams,
    unit: &UnitCosts,
    spec: &PowerSpec,
    config: &OptimizerConfig,
) -> Result<BudgetSearch> {
    spec.validate()?;
    config.validate()?;
    let target = se_target(spec);
    let start = initial_budget(params1, params2, unit, target)?;
    let floor_budget = minimal_two_group_budget(unit, &config.allocation_points(), [None, None]);

    let mut budget = start.max(floor_budget);
    let mut bisected = false;
    let mut trace = Vec::new();
    let mut below: Option<f64> = None;
    let mut above: Option<(f64, TwoGroupReport)> = None;
    for iteration in 0..config.max_iterations {
        let cost = unit.with_budget(budget)?;
        let report = optimize_two_groups(params1, params2, &cost, config)?;
        let se = report.se_combined;
        trace.push(BudgetStep {
            iteration,
            budget,
            se,
            allocation: report.design.allocation,
            bisected,
        });
        let at_floor = budget <= floor_budget;
        let mut warnings = Vec::new();
        if se <= target {
            let done = (target - se) <= config.budget_tolerance || at_floor;
            if at_floor && !((target - se) <= config.budget_tolerance) {
                warnings.push(format!(
                    "the smallest feasible budget {floor_budget} already beats the target SE"
                ));
            }
            if !matches!(&above, Some((b, _)) if *b <= budget) {
                above = Some((budget, report));
            }
            if done {
                let (budget, report) = above.take().expect("just stored");
                return Ok(finish(budget, target, start, trace, report, warnings));
            }
        } else if below.is_none_or(|b| b < budget) {
            below = Some(budget);
        }

        if let (Some(lo), Some((hi, _))) = (below, &above) {
            if hi - lo <= unit.c_q {
                let (budget, report) = above.take().expect("bracket is set");
                let mut warnings = report.warnings.clone();
                warnings.push(format!(
                    "SE cannot be brought within {} of the target at this budget scale; \
                     returning the cheapest budget found that meets it",
                    config.budget_tolerance
                ));
                return Ok(finish(budget, target, start, trace, report, warnings));
            }
        }

        let rescaled = ((se / target).powi(2) * budget).max(floor_budget);
        let inside = below.is_none_or(|lo| rescaled > lo)
            && above.as_ref().is_none_or(|(hi, _)| rescaled < *hi);
        bisected = !inside;
        budget = match (inside, below, &above) {
            (false, Some(lo), Some((hi, _))) => (lo * hi).sqrt(),
            _ => rescaled,
        };
    }
    Err(Error::NoConvergence { trace })
}

fn finish(
    budget: f64,
    se_target: f64,
    initial_budget: f64,
    trace: Vec<BudgetStep>,
    report: TwoGroupReport,
    mut warnings: Vec<String>,
) -> BudgetSearch {
    for w in &report.warnings {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    BudgetSearch {
        budget,
        se_target,
        initial_budget,
        iterations: trace.len() - 1,
        trace,
        report,
        warnings,
    }
}
