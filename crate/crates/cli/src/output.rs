//! Rendering of results as aligned text, tidy CSV and JSON envelopes.
//!
//! Text tables are printed from the CSV rows, so every number shown on screen
//! is also in the machine-readable output.

use std::path::Path;

use calidesign::estimation::ParamEstimates;
use calidesign::optimizer::{BudgetSearch, DesignReport};
use calidesign::requests::{DesignResult, Envelope, PowerResult, SimulateResult, SweepResult};
use calidesign::simulation::ReplicateResult;
use calidesign::sweeps::{write_rows_csv, SensitivityRow};
use serde::Serialize;

use crate::config::Format;
use crate::error::CliError;

pub struct Table {
    pub name: String,
    pub csv: String,
}

/// A finished run: the JSON document plus its tables.
pub struct Rendered {
    pub name: &'static str,
    pub title: String,
    pub json: String,
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
}

impl Rendered {
    fn new<T: Serialize>(
        name: &'static str,
        title: String,
        env: &Envelope<T>,
        tables: Vec<Table>,
    ) -> Result<Self, CliError> {
        Ok(Self {
            name,
            title,
            json: to_json(env)?,
            tables,
            warnings: env.warnings.clone(),
        })
    }

    pub fn stdout(&self, format: Format) -> String {
        match format {
            Format::Json => self.json.clone(),
            // the first table is the primary one; the rest go to --out
            Format::Csv => self
                .tables
                .first()
                .map(|t| t.csv.clone())
                .unwrap_or_default(),
            Format::Text => self.text(),
        }
    }

    fn text(&self) -> String {
        let mut out = format!("{}\n", self.title);
        for table in &self.tables {
            out.push('\n');
            if self.tables.len() > 1 {
                out.push_str(&format!("[{}]\n", table.name));
            }
            out.push_str(&align(&table.csv));
        }
        if !self.warnings.is_empty() {
            out.push_str("\nwarnings:\n");
            for w in &self.warnings {
                out.push_str(&format!("  - {w}\n"));
            }
        }
        out
    }

    /// Writes `<name>.json` and one CSV per table into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        write_file(&dir.join(format!("{}.json", self.name)), &self.json)?;
        for table in &self.tables {
            write_file(&dir.join(format!("{}.csv", table.name)), &table.csv)?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn table<T: Serialize>(name: &str, rows: &[T]) -> Result<Table, CliError> {
    let mut buf = Vec::new();
    write_rows_csv(rows, &mut buf)?;
    Ok(Table {
        name: name.to_string(),
        csv: String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))?,
    })
}

fn is_currency(column: &str) -> bool {
    column.contains("budget") || column == "c_total"
}

/// Six significant digits; currency to whole units.
fn format_cell(column: &str, cell: &str) -> String {
    if cell.parse::<i64>().is_ok() {
        return cell.to_string();
    }
    let Ok(v) = cell.parse::<f64>() else {
        return cell.to_string();
    };
    if is_currency(column) {
        return format!("{v:.0}");
    }
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = 5 - v.abs().log10().floor() as i32;
    if (0..=9).contains(&decimals) {
        format!("{v:.*}", decimals as usize)
    } else {
        format!("{v:.5e}")
    }
}

fn align(csv_text: &str) -> String {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(_) => return csv_text.to_string(),
    };
    let mut rows = vec![header.clone()];
    for record in reader.records().flatten() {
        rows.push(
            record
                .iter()
                .enumerate()
                .map(|(i, c)| format_cell(&header[i], c))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r.get(i).map_or(0, |c| c.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct DesignRow {
    group: String,
    n_total: Option<u64>,
    n_direct: Option<u64>,
    k_reps: Option<u64>,
    sampling_fraction: Option<f64>,
    sampling_fraction_reported: Option<f64>,
    allocation: Option<f64>,
    budget: f64,
    spent_budget: f64,
    slack_budget: f64,
    variance: f64,
    se: f64,
}

fn group_row(group: usize, r: &DesignReport, allocation: Option<f64>) -> DesignRow {
    DesignRow {
        group: group.to_string(),
        n_total: Some(r.design.n_total),
        n_direct: Some(r.design.n_direct),
        k_reps: Some(r.design.k_reps),
        sampling_fraction: Some(r.sampling_fraction),
        sampling_fraction_reported: Some(r.sampling_fraction_reported),
        allocation,
        budget: r.budget,
        spent_budget: r.spent_budget,
        slack_budget: r.slack_budget,
        variance: r.achieved_variance,
        se: r.achieved_se,
    }
}

fn design_rows(result: &DesignResult) -> Vec<DesignRow> {
    match result {
        DesignResult::Single(r) => vec![group_row(1, r, None)],
        DesignResult::TwoGroups(r) => {
            let a = r.design.allocation;
            vec![
                group_row(1, &r.groups[0], Some(a)),
                group_row(2, &r.groups[1], Some(1.0 - a)),
                DesignRow {
                    group: "combined".into(),
                    n_total: None,
                    n_direct: None,
                    k_reps: None,
                    sampling_fraction: None,
                    sampling_fraction_reported: None,
                    allocation: None,
                    budget: r.c_total,
                    spent_budget: r.spent_budget,
                    slack_budget: r.slack_budget,
                    variance: r.total_variance,
                    se: r.se_combined,
                },
            ]
        }
    }
}

pub fn design(env: &Envelope<DesignResult>) -> Result<Rendered, CliError> {
    let budget = match &env.result {
        DesignResult::Single(r) => r.budget,
        DesignResult::TwoGroups(r) => r.c_total,
    };
    let title = format!("Optimal design at a budget of {budget:.0}");
    Rendered::new(
        "design",
        title,
        env,
        vec![table("design", &design_rows(&env.result))?],
    )
}

#[derive(Serialize)]
struct BudgetSummary {
    budget: f64,
    se_target: f64,
    se: f64,
    initial_budget: f64,
    iterations: usize,
    allocation: f64,
}

pub fn budget(env: &Envelope<BudgetSearch>) -> Result<Rendered, CliError> {
    let s = &env.result;
    let summary = BudgetSummary {
        budget: s.budget,
        se_target: s.se_target,
        se: s.report.se_combined,
        initial_budget: s.initial_budget,
        iterations: s.iterations,
        allocation: s.report.design.allocation,
    };
    let design = DesignResult::TwoGroups(Box::new(s.report.clone()));
    let tables = vec![
        table("budget", &[summary])?,
        table("budget_trace", &s.trace)?,
        table("budget_design", &design_rows(&design))?,
    ];
    let title = format!("Minimum budget for the power target: {:.0}", s.budget);
    Rendered::new("budget", title, env, tables)
}

#[derive(Serialize)]
struct PowerRow {
    se: f64,
    power: f64,
    se_target: Option<f64>,
    meets_target: Option<bool>,
    variance_1: Option<f64>,
    variance_2: Option<f64>,
}

pub fn power(env: &Envelope<PowerResult>) -> Result<Rendered, CliError> {
    let r = &env.result;
    let row = PowerRow {
        se: r.se,
        power: r.power,
        se_target: r.se_target,
        meets_target: r.meets_target,
        variance_1: r.variances.first().copied(),
        variance_2: r.variances.get(1).copied(),
    };
    Rendered::new(
        "power",
        "Power of the design".into(),
        env,
        vec![table("power", &[row])?],
    )
}

#[derive(Serialize)]
struct EstimateRow {
    group: u8,
    parameter: &'static str,
    value: f64,
    se: Option<f64>,
}

#[derive(Serialize)]
struct SampleRow {
    group: u8,
    n_total: usize,
    n_direct: usize,
    k_reps: usize,
}

pub fn estimate(env: &Envelope<ParamEstimates>) -> Result<Rendered, CliError> {
    let groups = &env.result.groups;
    let rows: Vec<EstimateRow> = groups
        .iter()
        .flat_map(|g| {
            g.fields().into_iter().map(|(parameter, e)| EstimateRow {
                group: g.group,
                parameter,
                value: e.value,
                se: e.se,
            })
        })
        .collect();
    let samples: Vec<SampleRow> = groups
        .iter()
        .map(|g| SampleRow {
            group: g.group,
            n_total: g.n_total,
            n_direct: g.n_direct,
            k_reps: g.k_reps,
        })
        .collect();
    let tables = vec![
        table("estimates", &rows)?,
        table("estimate_samples", &samples)?,
    ];
    Rendered::new(
        "estimate",
        "Parameter estimates from pilot data".into(),
        env,
        tables,
    )
}

#[derive(Serialize)]
struct SeRow {
    empirical_se: f64,
    mc_error: f64,
    closed_form_se: f64,
    z_score: f64,
    mean_mu_hat: f64,
    replications: usize,
    failures: usize,
}

pub fn simulate(env: &Envelope<SimulateResult>) -> Result<Rendered, CliError> {
    let (title, t) = match &env.result {
        SimulateResult::Se(r) => {
            let row = SeRow {
                empirical_se: r.empirical_se,
                mc_error: r.mc_error,
                closed_form_se: r.closed_form_se,
                z_score: r.z_score(),
                mean_mu_hat: r.mean_mu_hat,
                replications: r.replications,
                failures: r.failures,
            };
            (
                "Monte Carlo SE of the estimator",
                table("simulate", &[row])?,
            )
        }
        SimulateResult::Power(r) => (
            "Monte Carlo power of the two-group test",
            table("simulate", &[r])?,
        ),
    };
    Rendered::new("simulate", title.into(), env, vec![t])
}

#[derive(Serialize)]
struct ReplicateRow {
    replicate: usize,
    mu_hat: Option<f64>,
    beta0: Option<f64>,
    beta1: Option<f64>,
    nu_hat: Option<f64>,
}

pub fn replicates_csv(results: &[ReplicateResult]) -> Result<String, CliError> {
    let rows: Vec<ReplicateRow> = results
        .iter()
        .map(|r| ReplicateRow {
            replicate: r.replicate,
            mu_hat: r.estimate.as_ref().map(|e| e.mu_hat),
            beta0: r.estimate.as_ref().map(|e| e.beta0),
            beta1: r.estimate.as_ref().map(|e| e.beta1),
            nu_hat: r.estimate.as_ref().map(|e| e.nu_hat),
        })
        .collect();
    Ok(table("replicates", &rows)?.csv)
}

pub fn sweep(env: &Envelope<SweepResult>) -> Result<Rendered, CliError> {
    let (title, t) = match &env.result {
        SweepResult::Grid(grid) => {
            let mut buf = Vec::new();
            grid.write_csv(&mut buf)?;
            let csv = String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))?;
            (
                format!("Sweep over {}", grid.axes.join(" x ")),
                Table {
                    name: "sweep".into(),
                    csv,
                },
            )
        }
        SweepResult::Thresholds(rows) => (
            "Replicate-count thresholds in r_delta".into(),
            table("sweep", rows)?,
        ),
        SweepResult::Surface(rows) => ("SE surface".into(), table("sweep", rows)?),
    };
    Rendered::new("sweep", title, env, vec![t])
}

pub fn sensitivity(env: &Envelope<Vec<SensitivityRow>>) -> Result<Rendered, CliError> {
    let axis = env.result.first().map_or("", |r| r.axis.name());
    let title = format!("Design efficiency under a misstated {axis}");
    Rendered::new(
        "sensitivity",
        title,
        env,
        vec![table("sensitivity", &env.result)?],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_are_rounded_for_display() {
        assert_eq!(format_cell("se", "0.0356912345"), "0.0356912");
        assert_eq!(format_cell("budget", "1016565.4"), "1016565");
        assert_eq!(format_cell("n_total", "64"), "64");
        assert_eq!(format_cell("error", "infeasible"), "infeasible");
        assert_eq!(format_cell("se", "1.5e-12"), "1.50000e-12");
    }

    #[test]
    fn tables_align() {
        let text = align("a,bb\n1,2\n333,4\n");
        assert_eq!(text, "a    bb\n1    2\n333  4\n");
    }
}
