//! Monte Carlo checks of the closed-form variance and power.
//!
//! Every replicate draws from its own ChaCha8 stream: the generator is seeded
//! with `seed` and switched to stream `replicate`, so results do not depend on
//! how replicates are scheduled across threads. Within a replicate, subjects
//! are generated in order, each as `T`, then `Q`, then the `K` direct
//! measurements when the subject is in the calibration subsample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{mle_mu_from_summaries, MuEstimate};
use crate::model::{normal_quantile, var_mu_hat, Design, ModelParams, PowerSpec, RawParams};
use crate::pilot::{PilotDataset, PilotRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    /// Without raw parameters, `α₀ = 0`, `α₁ = 1` are used.
    pub params: ModelParams,
    pub design: Design,
    pub mu: f64,
    pub replications: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.replications == 0 {
            return Err(Error::invalid("replications", "must be at least 1"));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite"));
        }
        Ok(())
    }
}

/// Per-replicate record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// `None` when the estimator failed on this replicate's data.
    pub estimate: Option<MuEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSe {
    pub empirical_se: f64,
    /// Standard error of `empirical_se` itself.
    pub mc_error: f64,
    pub closed_form_se: f64,
    pub mean_mu_hat: f64,
    pub replications: usize,
    pub failures: usize,
}

impl MonteCarloSe {
    /// Distance between the empirical and closed-form SE in MC errors.
    pub fn z_score(&self) -> f64 {
        (self.empirical_se - self.closed_form_se) / self.mc_error
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn normal(rng: &mut impl Rng, mean: f64, variance: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + variance.sqrt() * z
}

struct GroupDraw {
    q: Vec<f64>,
    replicates: Vec<Vec<f64>>,
}

fn draw_group(rng: &mut impl Rng, params: &ModelParams, design: &Design, mu: f64) -> GroupDraw {
    let RawParams {
        alpha0,
        alpha1,
        sigma2_phi,
        sigma2_delta,
    } = params.raw_or_canonical();
    let s2 = params.sigma2_eps();
    let (n_total, n_direct, k) = (
        design.n_total as usize,
        design.n_direct as usize,
        design.k_reps as usize,
    );
    let mut q = Vec::with_capacity(n_total);
    let mut replicates = Vec::with_capacity(n_direct);
    for j in 0..n_total {
        let t = normal(rng, mu, s2);
        q.push(normal(rng, alpha0 + alpha1 * t, sigma2_phi));
        if j < n_direct {
            replicates.push((0..k).map(|_| normal(rng, t, sigma2_delta)).collect());
        }
    }
    GroupDraw { q, replicates }
}

fn estimate_draw(draw: &GroupDraw) -> Option<MuEstimate> {
    let m_bar: Vec<f64> = draw
        .replicates
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    mle_mu_from_summaries(&draw.q, &draw.q[..m_bar.len()], &m_bar).ok()
}

/// One synthetic pilot dataset (replicate 0 of the spec) as group 1.
pub fn simulate_dataset(spec: &SimSpec) -> Result<PilotDataset> {
    spec.validate()?;
    let mut rng = replicate_rng(spec.seed, 0);
    let draw = draw_group(&mut rng, &spec.params, &spec.design, spec.mu);
    let width = spec.design.n_total.to_string().len();
    let records = draw
        .q
        .iter()
        .enumerate()
        .map(|(j, &q)| PilotRecord {
            subject_id: format!("s{:0width$}", j + 1),
            group: 1,
            q,
            replicates: draw.replicates.get(j).cloned().unwrap_or_default(),
        })
        .collect();
    PilotDataset::new(records)
}

/// The MLE on every replicate, in replicate order.
pub fn simulate_replicates(spec: &SimSpec) -> Result<Vec<ReplicateResult>> {
    spec.validate()?;
    Ok((0..spec.replications)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = replicate_rng(spec.seed, replicate);
            let draw = draw_group(&mut rng, &spec.params, &spec.design, spec.mu);
            ReplicateResult {
                replicate,
                estimate: estimate_draw(&draw),
            }
        })
        .collect())
}

/// Empirical SE of the MLE across replicates, compared with the closed form.
pub fn monte_carlo_se(spec: &SimSpec) -> Result<MonteCarloSe> {
    let results = simulate_replicates(spec)?;
    summarize(spec, &results)
}

pub fn summarize(spec: &SimSpec, results: &[ReplicateResult]) -> Result<MonteCarloSe> {
    let values: Vec<f64> = results
        .iter()
        .filter_map(|r| r.estimate.map(|e| e.mu_hat))
        .collect();
    let failures = results.len() - values.len();
    check_failures(failures, results.len())?;
    if values.len() < 2 {
        return Err(Error::InsufficientData(
            "at least two successful replicates are needed".into(),
        ));
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / r;
    let s2 = m2 * r / (r - 1.0);
    let s = s2.sqrt();
    // delta method on Var(s²) ≈ (m4 − s⁴)/R
    let mc_error = ((m4 - s2 * s2).max(0.0) / r).sqrt() / (2.0 * s);
    Ok(MonteCarloSe {
        empirical_se: s,
        mc_error,
        closed_form_se: var_mu_hat(&spec.params, &spec.design)?.sqrt(),
        mean_mu_hat: mean,
        replications: results.len(),
        failures,
    })
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed * 100 > total {
        return Err(Error::ReplicateFailures { failed, total });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoGroupSimSpec {
    pub params: [ModelParams; 2],
    pub designs: [Design; 2],
    /// Mean of group 1; group 2 has mean `mu1 + Δ`.
    pub mu1: f64,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloPower {
    pub rejection_rate: f64,
    /// Binomial standard error of the rejection rate.
    pub mc_error: f64,
    /// Closed-form SE of `μ̂₂ − μ̂₁` used in the Wald statistic.
    pub se_combined: f64,
    pub replications: usize,
    pub failures: usize,
}

/// Fraction of replicates in which the two-sided Wald test of `μ₂ = μ₁`
/// rejects, with the closed-form SE in the denominator.
/// `Δ = 0` is accepted so the size of the test can be checked.
pub fn monte_carlo_power(spec: &TwoGroupSimSpec, power: &PowerSpec) -> Result<MonteCarloPower> {
    let null_ok = PowerSpec {
        delta: if power.delta == 0.0 { 1.0 } else { power.delta },
        ..*power
    };
    null_ok.validate()?;
    for (i, d) in spec.designs.iter().enumerate() {
        d.validate()
            .map_err(|e| Error::invalid(format!("designs[{i}]"), e.to_string()))?;
    }
    if spec.replications == 0 {
        return Err(Error::invalid("replications", "must be at least 1"));
    }
    let se = (var_mu_hat(&spec.params[0], &spec.designs[0])?
        + var_mu_hat(&spec.params[1], &spec.designs[1])?)
    .sqrt();
    let critical = normal_quantile(1.0 - power.alpha / 2.0);
    let mu = [spec.mu1, spec.mu1 + power.delta];

    let outcomes: Vec<Option<bool>> = (0..spec.replications)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = replicate_rng(spec.seed, replicate);
            let e1 = estimate_draw(&draw_group(
                &mut rng,
                &spec.params[0],
                &spec.designs[0],
                mu[0],
            ))?;
            let e2 = estimate_draw(&draw_group(
                &mut rng,
                &spec.params[1],
                &spec.designs[1],
                mu[1],
            ))?;
            Some(((e2.mu_hat - e1.mu_hat) / se).abs() > critical)
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failures, outcomes.len())?;
    let ok = (outcomes.len() - failures) as f64;
    let rate = outcomes.iter().filter(|o| **o == Some(true)).count() as f64 / ok;
    Ok(MonteCarloPower {
        rejection_rate: rate,
        mc_error: (rate * (1.0 - rate) / ok).sqrt(),
        se_combined: se,
        replications: outcomes.len(),
        failures,
    })
}
