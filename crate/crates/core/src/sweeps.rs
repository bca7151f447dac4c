//! Parameter sweeps, sensitivity scans and design efficiency.
//!
//! Every sweep returns rows in deterministic grid order whatever the thread
//! count, and every row type writes as flat CSV with one row per grid point.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{var_mu_hat, CostModel, Design, ModelParams};
use crate::optimizer::{optimize_single_group, optimize_two_groups, OptimizerConfig};

/// Largest grid any sweep will evaluate.
pub const MAX_GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    /// `sqrt(V_min / V_max)`: the ratio of standard errors.
    pub ratio: f64,
    /// `V_min / V_max`.
    pub variance_ratio: f64,
    pub variance_a: f64,
    pub variance_b: f64,
}

/// Compares two designs by their total variance at the true parameters, one
/// design per group in `params_true` order.
pub fn efficiency(
    params_true: &[ModelParams],
    a: &[Design],
    b: &[Design],
    tie_tolerance: f64,
) -> Result<Efficiency> {
    if a.len() != params_true.len() || b.len() != params_true.len() {
        return Err(Error::invalid(
            "designs",
            "need one design per group for both designs",
        ));
    }
    let total = |designs: &[Design]| -> Result<f64> {
        params_true
            .iter()
            .zip(designs)
            .map(|(p, d)| var_mu_hat(p, d))
            .sum()
    };
    let (va, vb) = (total(a)?, total(b)?);
    let (lo, hi) = if va <= vb { (va, vb) } else { (vb, va) };
    let variance_ratio = if hi - lo <= tie_tolerance * hi {
        1.0
    } else {
        lo / hi
    };
    Ok(Efficiency {
        ratio: variance_ratio.sqrt(),
        variance_ratio,
        variance_a: va,
        variance_b: vb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityAxis {
    /// Population variance, error ratios held fixed.
    Sigma2Eps,
    RDelta,
    RPhi,
}

impl SensitivityAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sigma2Eps => "sigma2_eps",
            Self::RDelta => "r_delta",
            Self::RPhi => "r_phi",
        }
    }

    fn value(self, p: &ModelParams) -> f64 {
        match self {
            Self::Sigma2Eps => p.sigma2_eps(),
            Self::RDelta => p.r_delta(),
            Self::RPhi => p.r_phi(),
        }
    }

    fn perturb(self, p: &ModelParams, multiplier: f64) -> Result<ModelParams> {
        let v = self.value(p) * multiplier;
        match self {
            Self::Sigma2Eps => p.with_sigma2_eps(v),
            Self::RDelta => p.with_r_delta(v),
            Self::RPhi => p.with_r_phi(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub axis: SensitivityAxis,
    pub multiplier: f64,
    /// Value of the perturbed parameter used at the design stage.
    pub assumed_value: f64,
    pub efficiency: f64,
    pub variance_ratio: f64,
    pub allocation: f64,
    pub n_total_1: u64,
    pub n_direct_1: u64,
    pub k_reps_1: u64,
    pub n_total_2: u64,
    pub n_direct_2: u64,
    pub k_reps_2: u64,
}

/// Designs the study under a misstated parameter for one group and scores the
/// result against the design optimal under the true parameters.
pub fn sensitivity_scan(
    truth: [ModelParams; 2],
    group: u8,
    axis: SensitivityAxis,
    multipliers: &[f64],
    cost: &CostModel,
    config: &OptimizerConfig,
) -> Result<Vec<SensitivityRow>> {
    if group != 1 && group != 2 {
        return Err(Error::invalid("group", "must be 1 or 2"));
    }
    if multipliers.is_empty() {
        return Err(Error::invalid("multipliers", "must not be empty"));
    }
    check_points(multipliers.len())?;
    for (i, &m) in multipliers.iter().enumerate() {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid(
                format!("multipliers[{i}]"),
                "must be finite and positive",
            ));
        }
    }
    let optimum = optimize_two_groups(&truth[0], &truth[1], cost, config)?.design;
    let idx = (group - 1) as usize;
    multipliers
        .par_iter()
        .map(|&m| {
            let mut assumed = truth;
            assumed[idx] = axis.perturb(&truth[idx], m)?;
            let design = optimize_two_groups(&assumed[0], &assumed[1], cost, config)?.design;
            let eff = efficiency(
                &truth,
                &design.designs(),
                &optimum.designs(),
                config.tie_tolerance,
            )?;
            let [g1, g2] = design.designs();
            Ok(SensitivityRow {
                axis,
                multiplier: m,
                assumed_value: axis.value(&assumed[idx]),
                efficiency: eff.ratio,
                variance_ratio: eff.variance_ratio,
                allocation: design.allocation,
                n_total_1: g1.n_total,
                n_direct_1: g1.n_direct,
                k_reps_1: g1.k_reps,
                n_total_2: g2.n_total,
                n_direct_2: g2.n_direct,
                k_reps_2: g2.k_reps,
            })
        })
        .collect()
}

/// Values of `r_δ` where the single-group optimum changes character, for a
/// grid of cost ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub r_cb: f64,
    pub r_phi: f64,
    pub r_c: f64,
    /// Smallest `r_δ` at which the optimum uses `K ≥ 2`.
    pub k1_to_2: Option<f64>,
    /// Smallest `r_δ` at which the optimum uses `K ≥ 3`.
    pub k2_to_3: Option<f64>,
    /// Smallest `r_δ` at which everyone gets direct measurements.
    pub full_sampling: Option<f64>,
}

impl ThresholdRow {
    pub fn k1_to_2_ratio(&self) -> Option<f64> {
        self.k1_to_2.map(|r| r / self.r_cb)
    }

    pub fn k2_to_3_ratio(&self) -> Option<f64> {
        self.k2_to_3.map(|r| r / self.r_cb)
    }
}

/// Relative bracket width at which threshold bisection stops.
pub const THRESHOLD_RELATIVE_WIDTH: f64 = 1e-3;
// give up when no transition shows up below this multiple of r_cb
const THRESHOLD_SEARCH_LIMIT: f64 = 1e6;

/// Bisects `r_δ` for each grid point with `C_Q = 1`, `C_B = r_CB` and budget
/// `r_C`. The population variance does not affect the optimum and is set to 1.
pub fn threshold_scan(
    r_cb_grid: &[f64],
    r_phi: f64,
    r_c: f64,
    config: &OptimizerConfig,
) -> Result<Vec<ThresholdRow>> {
    check_points(r_cb_grid.len())?;
    for (i, &r) in r_cb_grid.iter().enumerate() {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(
                format!("r_cb[{i}]"),
                "must be finite and positive",
            ));
        }
    }
    ModelParams::new(1.0, 0.0, r_phi)?;
    r_cb_grid
        .par_iter()
        .map(|&r_cb| {
            let cost = CostModel::new(1.0, r_cb, r_c)?;
            let optimum = |r_delta: f64| -> Result<Design> {
                Ok(
                    optimize_single_group(&ModelParams::new(1.0, r_delta, r_phi)?, &cost, config)?
                        .design,
                )
            };
            let k_above = |k: u64| move |d: &Design| d.k_reps > k;
            Ok(ThresholdRow {
                r_cb,
                r_phi,
                r_c,
                k1_to_2: bisect_threshold(r_cb, &optimum, k_above(1))?,
                k2_to_3: bisect_threshold(r_cb, &optimum, k_above(2))?,
                full_sampling: bisect_threshold(r_cb, &optimum, |d| d.n_direct == d.n_total)?,
            })
        })
        .collect()
}

fn bisect_threshold(
    scale: f64,
    optimum: &impl Fn(f64) -> Result<Design>,
    predicate: impl Fn(&Design) -> bool,
) -> Result<Option<f64>> {
    if predicate(&optimum(0.0)?) {
        return Ok(Some(0.0));
    }
    let mut lo = 0.0;
    let mut hi = scale / 4.0;
    while !predicate(&optimum(hi)?) {
        lo = hi;
        hi *= 2.0;
        if hi > THRESHOLD_SEARCH_LIMIT * scale {
            return Ok(None);
        }
    }
    while lo == 0.0 || hi / lo > 1.0 + THRESHOLD_RELATIVE_WIDTH {
        let mid = if lo == 0.0 {
            hi / 2.0
        } else {
            (lo * hi).sqrt()
        };
        if predicate(&optimum(mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi < 1e-12 * scale {
            return Ok(Some(hi));
        }
    }
    Ok(Some((lo * hi).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub n_total: u64,
    pub n_direct: u64,
    pub k_reps: u64,
    pub r_delta: f64,
    pub r_phi: f64,
    pub se: f64,
}

/// SE of `μ̂` over a grid of `(r_δ, K, n)` at fixed `N`, in that nesting order.
/// Grid values of `n` above `N` are skipped.
pub fn se_surface(
    sigma2_eps: f64,
    n_total: u64,
    n_values: &[u64],
    k_values: &[u64],
    r_deltas: &[f64],
    r_phi: f64,
) -> Result<Vec<SurfaceRow>> {
    check_points(n_values.len() * k_values.len() * r_deltas.len())?;
    let mut rows = Vec::new();
    for &r_delta in r_deltas {
        let params = ModelParams::new(sigma2_eps, r_delta, r_phi)?;
        for &k in k_values {
            for &n in n_values.iter().filter(|&&n| n <= n_total) {
                let design = Design::new(n_total, n, k)?;
                rows.push(SurfaceRow {
                    n_total,
                    n_direct: n,
                    k_reps: k,
                    r_delta,
                    r_phi,
                    se: var_mu_hat(&params, &design)?.sqrt(),
                });
            }
        }
    }
    Ok(rows)
}

/// Quantities a [`SweepGrid`] may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Sigma2Eps,
    RDelta,
    RPhi,
    CQ,
    CB,
    CTotal,
    /// Budget in units of `C_Q`; sets `c_total = r_c · c_q`.
    RC,
    /// Sets `c_b = r_cb · c_q`.
    RCb,
    NTotal,
    NDirect,
    KReps,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sigma2Eps => "sigma2_eps",
            Self::RDelta => "r_delta",
            Self::RPhi => "r_phi",
            Self::CQ => "c_q",
            Self::CB => "c_b",
            Self::CTotal => "c_total",
            Self::RC => "r_c",
            Self::RCb => "r_cb",
            Self::NTotal => "n_total",
            Self::NDirect => "n_direct",
            Self::KReps => "k_reps",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, Self::NTotal | Self::NDirect | Self::KReps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Values for every quantity not on an axis. Counts are only needed for the
/// `se` target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub sigma2_eps: f64,
    pub r_delta: f64,
    pub r_phi: f64,
    #[serde(default = "default_c_q")]
    pub c_q: f64,
    #[serde(default = "default_c_b")]
    pub c_b: f64,
    #[serde(default)]
    pub c_total: Option<f64>,
    #[serde(default)]
    pub n_total: Option<u64>,
    #[serde(default)]
    pub n_direct: Option<u64>,
    #[serde(default)]
    pub k_reps: Option<u64>,
}

fn default_c_q() -> f64 {
    1.0
}

fn default_c_b() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    /// Optimal single-group design and its variance.
    #[default]
    OptimalDesign,
    /// Variance and SE of a fixed design.
    Se,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub axes: Vec<SweepAxis>,
    pub base: SweepBase,
    #[serde(default)]
    pub target: SweepTarget,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub n_total: Option<u64>,
    pub n_direct: Option<u64>,
    pub k_reps: Option<u64>,
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub sampling_fraction: Option<f64>,
    /// Why this point has no result, e.g. an infeasible budget.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Axis values in axis order.
    pub point: Vec<f64>,
    #[serde(flatten)]
    pub output: SweepOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axes: Vec<String>,
    pub target: SweepTarget,
    pub rows: Vec<SweepRow>,
}

const OUTPUT_COLUMNS: [&str; 7] = [
    "n_total",
    "n_direct",
    "k_reps",
    "variance",
    "se",
    "sampling_fraction",
    "error",
];

impl SweepTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let header: Vec<&str> = self
            .axes
            .iter()
            .map(String::as_str)
            .chain(OUTPUT_COLUMNS)
            .collect();
        out.write_record(&header).map_err(csv_error)?;
        for row in &self.rows {
            let o = &row.output;
            let mut record: Vec<String> = row.point.iter().map(f64::to_string).collect();
            record.extend([
                opt(o.n_total),
                opt(o.n_direct),
                opt(o.k_reps),
                opt(o.variance),
                opt(o.se),
                opt(o.sampling_fraction),
                o.error.clone().unwrap_or_default(),
            ]);
            out.write_record(&record).map_err(csv_error)?;
        }
        out.flush()
            .map_err(|e| Error::invalid("output", e.to_string()))
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid("output", e.to_string())
}

impl SweepGrid {
    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::invalid("axes", "at least one axis is required"));
        }
        check_points(self.point_count())?;
        for (i, axis) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|a| a.param == axis.param) {
                return Err(Error::invalid(format!("axes[{i}].param"), "appears twice"));
            }
            if axis.values.is_empty() {
                return Err(Error::invalid(
                    format!("axes[{i}].values"),
                    "must not be empty",
                ));
            }
            for (j, &v) in axis.values.iter().enumerate() {
                let field = || format!("axes[{i}].values[{j}]");
                let ok = match axis.param {
                    SweepParam::RDelta | SweepParam::RPhi => v.is_finite() && v >= 0.0,
                    p if p.is_count() => v.is_finite() && v >= 1.0 && v.fract() == 0.0,
                    _ => v.is_finite() && v > 0.0,
                };
                if !ok {
                    return Err(Error::invalid(field(), "out of range for this parameter"));
                }
            }
        }
        let on_axis = |p: SweepParam| self.axes.iter().any(|a| a.param == p);
        match self.target {
            SweepTarget::OptimalDesign => {
                if self.base.c_total.is_none()
                    && !on_axis(SweepParam::CTotal)
                    && !on_axis(SweepParam::RC)
                {
                    return Err(Error::invalid(
                        "base.c_total",
                        "required unless c_total or r_c is an axis",
                    ));
                }
            }
            SweepTarget::Se => {
                for (p, v) in [
                    (SweepParam::NTotal, self.base.n_total),
                    (SweepParam::NDirect, self.base.n_direct),
                    (SweepParam::KReps, self.base.k_reps),
                ] {
                    if v.is_none() && !on_axis(p) {
                        return Err(Error::invalid(
                            format!("base.{}", p.name()),
                            "required for the se target unless it is an axis",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates every grid point, first axis varying slowest. Points that are
    /// infeasible carry an error message instead of failing the sweep.
    pub fn run(&self, config: &OptimizerConfig) -> Result<SweepTable> {
        self.validate()?;
        config.validate()?;
        let points = self.points();
        let rows = points
            .into_par_iter()
            .map(|point| {
                let output = self
                    .evaluate(&point, config)
                    .unwrap_or_else(|e| SweepOutput {
                        error: Some(e.to_string()),
                        ..Default::default()
                    });
                SweepRow { point, output }
            })
            .collect();
        Ok(SweepTable {
            axes: self
                .axes
                .iter()
                .map(|a| a.param.name().to_string())
                .collect(),
            target: self.target,
            rows,
        })
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut p = p.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        points
    }

    fn evaluate(&self, point: &[f64], config: &OptimizerConfig) -> Result<SweepOutput> {
        let mut b = self.base;
        let (mut r_c, mut r_cb) = (None, None);
        for (axis, &v) in self.axes.iter().zip(point) {
            match axis.param {
                SweepParam::Sigma2Eps => b.sigma2_eps = v,
                SweepParam::RDelta => b.r_delta = v,
                SweepParam::RPhi => b.r_phi = v,
                SweepParam::CQ => b.c_q = v,
                SweepParam::CB => b.c_b = v,
                SweepParam::CTotal => b.c_total = Some(v),
                SweepParam::RC => r_c = Some(v),
                SweepParam::RCb => r_cb = Some(v),
                SweepParam::NTotal => b.n_total = Some(v as u64),
                SweepParam::NDirect => b.n_direct = Some(v as u64),
                SweepParam::KReps => b.k_reps = Some(v as u64),
            }
        }
        if let Some(r) = r_cb {
            b.c_b = r * b.c_q;
        }
        if let Some(r) = r_c {
            b.c_total = Some(r * b.c_q);
        }
        let params = ModelParams::new(b.sigma2_eps, b.r_delta, b.r_phi)?;
        let design = match self.target {
            SweepTarget::OptimalDesign => {
                let cost = CostModel::new(b.c_q, b.c_b, b.c_total.expect("validated"))?;
                optimize_single_group(&params, &cost, config)?.design
            }
            SweepTarget::Se => Design::new(
                b.n_total.expect("validated"),
                b.n_direct.expect("validated"),
                b.k_reps.expect("validated"),
            )?,
        };
        let variance = var_mu_hat(&params, &design)?;
        Ok(SweepOutput {
            n_total: Some(design.n_total),
            n_direct: Some(design.n_direct),
            k_reps: Some(design.k_reps),
            variance: Some(variance),
            se: Some(variance.sqrt()),
            sampling_fraction: Some(design.sampling_fraction()),
            error: None,
        })
    }
}

fn check_points(points: usize) -> Result<()> {
    if points > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge {
            points,
            limit: MAX_GRID_POINTS,
        });
    }
    Ok(())
}

/// Writes flat serializable rows as CSV with a header.
pub fn write_rows_csv<W: Write, T: Serialize>(rows: &[T], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row).map_err(csv_error)?;
    }
    out.flush()
        .map_err(|e| Error::invalid("output", e.to_string()))
}
