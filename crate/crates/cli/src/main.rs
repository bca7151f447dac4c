//! `calidesign`: plan calibration sub-studies from the command line.

mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use calidesign::model::Design;
use calidesign::pilot::PilotDataset;
use calidesign::requests::{run, SweepRequest};
use calidesign::simulation::{simulate_dataset, simulate_replicates, SimSpec};
use calidesign::sweeps::SensitivityAxis;
use clap::{Args, Parser, Subcommand};

use config::{Format, Mode, RunConfig, SimKind};
use error::CliError;
use output::Rendered;

#[derive(Debug, Parser)]
#[command(
    name = "calidesign",
    version,
    about = "Optimal design of calibration sub-studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory receiving the JSON result and every CSV table.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Case-study preset: hovell, wilson or tone.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Total budget.
    #[arg(long, global = true, allow_negative_numbers = true)]
    budget: Option<f64>,
    /// Cost of one indirect measurement.
    #[arg(long, global = true, allow_negative_numbers = true)]
    c_q: Option<f64>,
    /// Cost of one direct measurement.
    #[arg(long, global = true, allow_negative_numbers = true)]
    c_b: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Target power.
    #[arg(long, global = true, allow_negative_numbers = true)]
    power: Option<f64>,
    /// Effect size to detect.
    #[arg(long, global = true, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    allocation_grid: Option<f64>,
    #[arg(long, global = true)]
    replications: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the mode named in the config file.
    Run,
    /// Cheapest-variance design at a fixed budget.
    Design {
        /// Replicate count per group, comma separated; 0 leaves a group free.
        #[arg(long, value_delimiter = ',')]
        fixed_k: Option<Vec<u64>>,
    },
    /// Smallest budget meeting the power target.
    Budget,
    /// Power of given designs, or of a known SE.
    Power {
        /// Design of one group as N,n,K; repeat per group.
        #[arg(long = "design", value_parser = parse_design)]
        designs: Vec<Design>,
        /// Known SE of the group contrast.
        #[arg(long, allow_negative_numbers = true)]
        se: Option<f64>,
    },
    /// Estimate model parameters from a pilot CSV.
    Estimate {
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// External replicate-to-population variance ratio.
        #[arg(long, allow_negative_numbers = true)]
        r_delta: Option<f64>,
    },
    /// Monte Carlo checks and synthetic pilot data.
    Simulate {
        #[arg(long, value_enum)]
        kind: Option<SimKind>,
        /// True mean (of group 1 for power runs).
        #[arg(long, allow_negative_numbers = true)]
        mu: Option<f64>,
        /// Write per-replicate estimates to this CSV.
        #[arg(long, value_name = "PATH")]
        dump: Option<PathBuf>,
        #[arg(long = "design", value_parser = parse_design)]
        designs: Vec<Design>,
    },
    /// Parameter sweeps; `--r-cb` runs a replicate-count threshold scan.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        r_cb: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0, requires = "r_cb")]
        r_phi: f64,
        /// Budget over the indirect unit cost.
        #[arg(long, default_value_t = 2e5, requires = "r_cb")]
        r_c: f64,
    },
    /// Efficiency of designs built on misstated parameters.
    Sensitivity {
        /// sigma2_eps, r_delta or r_phi.
        #[arg(long, value_parser = parse_axis)]
        axis: Option<SensitivityAxis>,
        /// Group whose parameter is misstated.
        #[arg(long)]
        group: Option<u8>,
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
    },
}

fn parse_design(s: &str) -> Result<Design, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [n_total, n_direct, k_reps] = parts.as_slice() else {
        return Err("expected N,n,K".into());
    };
    let num = |p: &str| p.parse::<u64>().map_err(|e| format!("{p:?}: {e}"));
    Design::new(num(n_total)?, num(n_direct)?, num(k_reps)?).map_err(|e| e.to_string())
}

fn parse_axis(s: &str) -> Result<SensitivityAxis, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| "expected sigma2_eps, r_delta or r_phi".to_string())
}

fn apply_flags(cli: &Cli, config: &mut RunConfig) -> Option<Mode> {
    let c = &cli.common;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = Some(v);
            }
        };
    }
    set!(c.out, config.output);
    set!(c.format, config.format);
    set!(c.seed, config.seed);
    set!(c.preset, config.preset);
    set!(c.budget, config.costs.c_total);
    set!(c.c_q, config.costs.c_q);
    set!(c.c_b, config.costs.c_b);
    set!(c.alpha, config.power.alpha);
    set!(c.power, config.power.power);
    set!(c.delta, config.power.delta);
    set!(c.replications, config.simulate.replications);
    if let Some(grid) = c.allocation_grid {
        config
            .optimizer
            .get_or_insert_with(Default::default)
            .allocation_grid = grid;
    }
    let mode = match &cli.command {
        Command::Run => return config.mode,
        Command::Design { fixed_k } => {
            set!(fixed_k, config.fixed_k);
            Mode::Design
        }
        Command::Budget => Mode::Budget,
        Command::Power { designs, se } => {
            if !designs.is_empty() {
                config.designs = Some(designs.clone());
            }
            set!(se, config.power.se);
            Mode::Power
        }
        Command::Estimate { input, r_delta } => {
            set!(input, config.estimate.input);
            set!(r_delta, config.estimate.r_delta);
            Mode::Estimate
        }
        Command::Simulate {
            kind,
            mu,
            dump,
            designs,
        } => {
            set!(kind, config.simulate.kind);
            set!(mu, config.simulate.mu);
            set!(dump, config.simulate.dump);
            if !designs.is_empty() {
                config.designs = Some(designs.clone());
            }
            Mode::Simulate
        }
        Command::Sweep { r_cb, r_phi, r_c } => {
            if let Some(r_cb) = r_cb {
                config.sweep = Some(SweepRequest::Thresholds {
                    r_cb: r_cb.clone(),
                    r_phi: *r_phi,
                    r_c: *r_c,
                    optimizer: config.optimizer.unwrap_or_default(),
                });
            }
            Mode::Sweep
        }
        Command::Sensitivity {
            axis,
            group,
            multipliers,
        } => {
            set!(axis, config.sensitivity.axis);
            set!(group, config.sensitivity.group);
            set!(multipliers, config.sensitivity.multipliers);
            Mode::Sensitivity
        }
    };
    Some(mode)
}

/// Synthetic pilot data for every configured group, ids prefixed by group.
fn simulated_pilot(config: &RunConfig) -> Result<PilotDataset, CliError> {
    let Some(calidesign::requests::SimulateRequest::Se { mu, seed, .. }) =
        config.simulate_request().ok()
    else {
        return Err(CliError::Usage(
            "simulate: dataset needs groups and designs".into(),
        ));
    };
    let groups = config.groups.clone().unwrap_or_default();
    let designs = config.designs.clone().unwrap_or_default();
    if groups.len() != designs.len() {
        return Err(CliError::Usage(format!(
            "simulate: dataset needs one design per group, found {} groups and {} designs",
            groups.len(),
            designs.len()
        )));
    }
    let mut records = Vec::new();
    for (i, (params, design)) in groups.into_iter().zip(designs).enumerate() {
        let spec = SimSpec {
            params,
            design,
            mu,
            replications: 1,
            seed: seed.wrapping_add(i as u64),
        };
        for mut r in simulate_dataset(&spec)?.records().to_vec() {
            r.group = i as u8 + 1;
            r.subject_id = format!("g{}-{}", r.group, r.subject_id);
            records.push(r);
        }
    }
    Ok(PilotDataset::new(records)?)
}

fn execute(mode: Mode, config: &RunConfig) -> Result<Rendered, CliError> {
    match mode {
        Mode::Design => output::design(&run(&config.design_request()?)?),
        Mode::Budget => output::budget(&run(&config.budget_request()?)?),
        Mode::Power => output::power(&run(&config.power_request()?)?),
        Mode::Estimate => output::estimate(&run(&config.estimate_request()?)?),
        Mode::Simulate => {
            let request = config.simulate_request()?;
            let rendered = output::simulate(&run(&request)?)?;
            if let Some(path) = &config.simulate.dump {
                let calidesign::requests::SimulateRequest::Se {
                    params,
                    design,
                    mu,
                    replications,
                    seed,
                } = request
                else {
                    return Err(CliError::Usage(
                        "simulate: --dump is only available for kind se".into(),
                    ));
                };
                let spec = SimSpec {
                    params,
                    design,
                    mu,
                    replications,
                    seed,
                };
                output::write_file(path, &output::replicates_csv(&simulate_replicates(&spec)?)?)?;
            }
            Ok(rendered)
        }
        Mode::Sweep => output::sweep(&run(&config.sweep_request()?)?),
        Mode::Sensitivity => output::sensitivity(&run(&config.sensitivity_request()?)?),
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mode = apply_flags(&cli, &mut config)
        .ok_or_else(|| CliError::Usage("run: the config does not set a mode".into()))?;
    config.apply_preset()?;
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let format = config.format.unwrap_or_default();
    let mut stdout = std::io::stdout().lock();

    if mode == Mode::Simulate && config.sim_kind() == SimKind::Dataset {
        let data = simulated_pilot(&config)?;
        let csv = data.to_csv_string();
        if let Some(dir) = &config.output {
            std::fs::create_dir_all(dir)?;
            output::write_file(&dir.join("pilot.csv"), &csv)?;
        }
        let text = match format {
            Format::Json => {
                serde_json::to_string_pretty(&data).map_err(|e| CliError::Io(e.to_string()))? + "\n"
            }
            Format::Text | Format::Csv => csv,
        };
        stdout.write_all(text.as_bytes())?;
        return Ok(());
    }

    let rendered = execute(mode, &config)?;
    if let Some(dir) = &config.output {
        rendered.write_dir(dir)?;
    }
    stdout.write_all(rendered.stdout(format).as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
