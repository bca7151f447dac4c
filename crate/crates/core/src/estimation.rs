//! Estimation from pilot data: the maximum-likelihood estimate of the group
//! mean, and moment estimates of the design inputs.
//!
//! Moment estimators per group, with `M̄_j` the replicate mean of calibration
//! subject `j` and sample (co)variances taken with `n − 1` denominators:
//!
//! ```text
//! σ²_δ = Σ_j Σ_k (M_jk − M̄_j)² / Σ_j (K_j − 1)
//! σ²_ε = Var(M̄) − σ²_δ · mean(1/K_j)
//! α₁   = Cov(Q, M̄) / σ²_ε                 (calibration subjects)
//! σ²_φ = Var(Q) − α₁² σ²_ε                  (all subjects)
//! α₀   = Q̄ − α₁ M̄                          (Q̄ over all subjects)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{var_mu_hat, Design, ModelParams, MIN_SUBSAMPLE};
use crate::pilot::{GroupObservations, PilotDataset};

/// Variance estimates below this fraction of `Var(M̄)` are truncated to it.
pub const TRUNCATION_FRACTION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    pub mu_hat: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// Mean of the indirect measure over all subjects.
    pub nu_hat: f64,
    pub n_direct: usize,
    pub n_total: usize,
}

/// MLE of the group mean for one group of a pilot dataset.
pub fn mle_mu(data: &PilotDataset, group: u8) -> Result<MuEstimate> {
    let obs = data.observations(group);
    mle_mu_from_summaries(&obs.q_all, &obs.q_calibration, &obs.replicate_means())
}

/// MLE of the group mean from the indirect measures of all subjects, those of
/// the calibration subjects, and the calibration subjects' replicate means.
///
/// The slope comes from regressing `M̄` on `Q` over the calibration subsample,
/// the intercept goes through the subsample means, and the fitted line is
/// evaluated at the mean of `Q` over everyone.
pub fn mle_mu_from_summaries(
    q_all: &[f64],
    q_calibration: &[f64],
    m_bar: &[f64],
) -> Result<MuEstimate> {
    if q_calibration.len() != m_bar.len() {
        return Err(Error::invalid(
            "m_bar",
            format!(
                "{} replicate means for {} calibration subjects",
                m_bar.len(),
                q_calibration.len()
            ),
        ));
    }
    let n = q_calibration.len();
    if (n as u64) < MIN_SUBSAMPLE {
        return Err(Error::InsufficientData(format!(
            "{n} calibration subjects, at least {MIN_SUBSAMPLE} are needed"
        )));
    }
    if q_all.len() < n {
        return Err(Error::invalid(
            "q_all",
            "fewer subjects than in the calibration subsample",
        ));
    }
    let q_bar_n = mean(q_calibration);
    let m_bar_n = mean(m_bar);
    let sxx = centered_cross(q_calibration, q_calibration);
    if !(sxx > degenerate_floor(q_calibration)) {
        return Err(Error::DegenerateData(
            "indirect measure has no variance over the calibration subsample".into(),
        ));
    }
    let beta1 = centered_cross(q_calibration, m_bar) / sxx;
    let beta0 = m_bar_n - beta1 * q_bar_n;
    let nu_hat = mean(q_all);
    Ok(MuEstimate {
        mu_hat: beta0 + beta1 * nu_hat,
        beta0,
        beta1,
        nu_hat,
        n_direct: n,
        n_total: q_all.len(),
    })
}

/// A point estimate with an optional standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

impl From<f64> for Estimate {
    fn from(value: f64) -> Self {
        Self { value, se: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    /// Replicate-error ratio to use instead of estimating it. Required when the
    /// pilot has a single direct measurement per subject.
    pub r_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimates {
    pub group: u8,
    pub n_total: usize,
    pub n_direct: usize,
    /// Largest replicate count observed.
    pub k_reps: usize,
    pub alpha0: Estimate,
    pub alpha1: Estimate,
    pub sigma2_eps: Estimate,
    pub sigma2_phi: Estimate,
    pub sigma2_delta: Estimate,
    pub r_delta: Estimate,
    pub r_phi: Estimate,
    pub mu_hat: Estimate,
    pub nu_hat: Estimate,
    pub beta0_hat: Estimate,
    pub beta1_hat: Estimate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl GroupEstimates {
    pub fn to_model_params(&self) -> Result<ModelParams> {
        ModelParams::from_raw(
            self.alpha0.value,
            self.alpha1.value,
            self.sigma2_eps.value,
            self.sigma2_phi.value,
            self.sigma2_delta.value,
        )
    }

    /// `(name, estimate)` pairs in a fixed order.
    pub fn fields(&self) -> [(&'static str, Estimate); 11] {
        [
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("sigma2_eps", self.sigma2_eps),
            ("sigma2_phi", self.sigma2_phi),
            ("sigma2_delta", self.sigma2_delta),
            ("r_delta", self.r_delta),
            ("r_phi", self.r_phi),
            ("mu_hat", self.mu_hat),
            ("nu_hat", self.nu_hat),
            ("beta0_hat", self.beta0_hat),
            ("beta1_hat", self.beta1_hat),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimates {
    pub groups: Vec<GroupEstimates>,
}

impl ParamEstimates {
    /// `group.name = value` lines, with `group.name.se` where available.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let id = g.group;
            out += &format!("group{id}.n_total = {}\n", g.n_total);
            out += &format!("group{id}.n_direct = {}\n", g.n_direct);
            out += &format!("group{id}.k_reps = {}\n", g.k_reps);
            for (name, est) in g.fields() {
                out += &format!("group{id}.{name} = {}\n", est.value);
                if let Some(se) = est.se {
                    out += &format!("group{id}.{name}.se = {se}\n");
                }
            }
            for w in &g.warnings {
                out += &format!("group{id}.warning = {w}\n");
            }
        }
        out
    }
}

/// Estimates for every group in the dataset.
pub fn estimate_all(data: &PilotDataset, options: &EstimateOptions) -> Result<ParamEstimates> {
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "pilot dataset has no records".into(),
        ));
    }
    let groups = data
        .groups()
        .into_iter()
        .map(|g| estimate_params(data, g, options))
        .collect::<Result<_>>()?;
    Ok(ParamEstimates { groups })
}

pub fn estimate_params(
    data: &PilotDataset,
    group: u8,
    options: &EstimateOptions,
) -> Result<GroupEstimates> {
    let obs = data.observations(group);
    if obs.n_total() == 0 {
        return Err(Error::InsufficientData(format!(
            "group {group} has no subjects"
        )));
    }
    estimate_group(group, &obs, options)
}

fn estimate_group(
    group: u8,
    obs: &GroupObservations,
    options: &EstimateOptions,
) -> Result<GroupEstimates> {
    let mle = mle_mu_from_summaries(&obs.q_all, &obs.q_calibration, &obs.replicate_means())?;
    let k_max = obs.max_replicates();
    let mut warnings = Vec::new();

    let m_bar = obs.replicate_means();
    let var_m = centered_cross(&m_bar, &m_bar) / (m_bar.len() - 1) as f64;
    if !(var_m > 0.0) {
        return Err(Error::DegenerateData(format!(
            "replicate means in group {group} have no variance"
        )));
    }
    let floor = TRUNCATION_FRACTION * var_m;
    let inv_k = obs
        .replicates
        .iter()
        .map(|r| 1.0 / r.len() as f64)
        .sum::<f64>()
        / m_bar.len() as f64;
    if obs.replicates.iter().any(|r| r.len() != k_max) {
        warnings.push("unequal replicate counts; estimates use the mean of 1/K_j".into());
    }

    let (mut sigma2_eps, sigma2_delta) = match options.r_delta {
        Some(r_delta) => {
            if !(r_delta.is_finite() && r_delta >= 0.0) {
                return Err(Error::invalid("r_delta", "must be finite and non-negative"));
            }
            if k_max >= 2 {
                warnings.push(
                    "r_delta supplied externally; replicate spread in the data is ignored".into(),
                );
            }
            let s2 = var_m / (1.0 + r_delta * inv_k);
            (s2, r_delta * s2)
        }
        None => {
            if k_max < 2 {
                return Err(Error::NotIdentifiable { group });
            }
            let s2_delta = pooled_within_variance(&obs.replicates);
            (var_m - s2_delta * inv_k, s2_delta)
        }
    };
    if sigma2_eps < floor {
        warnings.push(format!(
            "WARNING: sigma2_eps estimate {sigma2_eps:.6e} truncated to {floor:.6e}; \
             replicate noise accounts for all the spread of the replicate means"
        ));
        sigma2_eps = floor;
    }

    let n = m_bar.len() as f64;
    let cov_qm = centered_cross(&obs.q_calibration, &m_bar) / (n - 1.0);
    let alpha1 = cov_qm / sigma2_eps;
    if !(alpha1.abs() > 0.0) || !alpha1.is_finite() {
        return Err(Error::DegenerateData(format!(
            "indirect and direct measures are uncorrelated in group {group}"
        )));
    }
    let var_q = centered_cross(&obs.q_all, &obs.q_all) / (obs.n_total() as f64 - 1.0).max(1.0);
    let mut sigma2_phi = var_q - alpha1 * alpha1 * sigma2_eps;
    if sigma2_phi < floor {
        warnings.push(format!(
            "WARNING: sigma2_phi estimate {sigma2_phi:.6e} truncated to {floor:.6e}"
        ));
        sigma2_phi = floor;
    }
    let alpha0 = mle.nu_hat - alpha1 * mean(&m_bar);

    let r_delta = sigma2_delta / sigma2_eps;
    let r_phi = sigma2_phi / (alpha1 * alpha1 * sigma2_eps);
    let mu_se = ModelParams::new(sigma2_eps, r_delta, r_phi)
        .ok()
        .zip(
            Design::new(
                obs.n_total() as u64,
                obs.n_direct() as u64,
                k_max.max(1) as u64,
            )
            .ok(),
        )
        .and_then(|(p, d)| var_mu_hat(&p, &d).ok())
        .map(f64::sqrt);

    Ok(GroupEstimates {
        group,
        n_total: obs.n_total(),
        n_direct: obs.n_direct(),
        k_reps: k_max,
        alpha0: alpha0.into(),
        alpha1: alpha1.into(),
        sigma2_eps: sigma2_eps.into(),
        sigma2_phi: sigma2_phi.into(),
        sigma2_delta: sigma2_delta.into(),
        r_delta: r_delta.into(),
        r_phi: r_phi.into(),
        mu_hat: Estimate {
            value: mle.mu_hat,
            se: mu_se,
        },
        nu_hat: mle.nu_hat.into(),
        beta0_hat: mle.beta0.into(),
        beta1_hat: mle.beta1.into(),
        warnings,
    })
}

fn pooled_within_variance(replicates: &[Vec<f64>]) -> f64 {
    let (mut ss, mut df) = (0.0, 0usize);
    for r in replicates.iter().filter(|r| r.len() >= 2) {
        let m = mean(r);
        ss += r.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        df += r.len() - 1;
    }
    ss / df as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn centered_cross(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum()
}

// sums of squares this small relative to the data are rounding noise
fn degenerate_floor(xs: &[f64]) -> f64 {
    let scale = xs.iter().map(|x| x * x).fold(0.0, f64::max);
    xs.len() as f64 * f64::EPSILON * scale
}
