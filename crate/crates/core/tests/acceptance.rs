//! Acceptance checks against the published case-study results and the
//! model's analytic properties.
//!
//! Runs as a plain binary (`harness = false`): one PASS/FAIL line per
//! criterion, detail lines underneath, non-zero exit if anything fails.

use std::process::ExitCode;
use std::time::Instant;

use calidesign::estimation::mle_mu_from_summaries;
use calidesign::fixtures;
use calidesign::model::{
    se_target, var_mu_hat, CostModel, Design, ModelParams, PowerSpec, MIN_SUBSAMPLE,
};
use calidesign::optimizer::{
    minimize_budget, optimize_single_group, optimize_two_groups, optimize_two_groups_with_k,
    OptimizerConfig,
};
use calidesign::simulation::{
    monte_carlo_power, monte_carlo_se, simulate_dataset, SimSpec, TwoGroupSimSpec,
};
use calidesign::sweeps::{efficiency, sensitivity_scan, threshold_scan, SensitivityAxis};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn criterion(&mut self, name: &str, run: impl FnOnce(&mut Vec<(bool, String)>)) {
        let start = Instant::now();
        let mut checks = Vec::new();
        run(&mut checks);
        let ok = !checks.is_empty() && checks.iter().all(|(pass, _)| *pass);
        println!(
            "{} {name} ({} checks, {:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            checks.len(),
            start.elapsed().as_secs_f64()
        );
        for (pass, detail) in &checks {
            println!("    {} {detail}", if *pass { "ok " } else { "BAD" });
        }
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

fn rel(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

fn close_design(d: &Design, n: u64, big_n: u64, k: u64) -> bool {
    d.n_direct.abs_diff(n) <= 1 && d.n_total.abs_diff(big_n) <= 1 && d.k_reps == k
}

fn fmt(d: &Design) -> String {
    format!("n={} N={} K={}", d.n_direct, d.n_total, d.k_reps)
}

fn se_target_values(out: &mut Vec<(bool, String)>) {
    for (power, expected) in [(0.8, 0.03569), (0.9, 0.03085)] {
        let t = se_target(&PowerSpec::new(0.05, power, 0.1).unwrap());
        out.push((
            within(t, expected, 1e-5),
            format!("power {power}: SE_target {t:.6} vs {expected} ±0.00001"),
        ));
    }
}

/// Expected `(n, N, K)` per group and the allocation, `None` where only the
/// replicate pattern is checked.
type DesignRow = (
    &'static str,
    f64,
    [(Option<(u64, u64)>, u64); 2],
    Option<f64>,
);

fn fixed_budget_designs(out: &mut Vec<(bool, String)>) {
    let rows: [DesignRow; 5] = [
        (
            "hovell",
            50_000.0,
            [(Some((64, 64)), 1), (Some((69, 70)), 1)],
            Some(0.48),
        ),
        (
            "wilson",
            50_000.0,
            [(Some((40, 40)), 2), (Some((40, 40)), 2)],
            Some(0.50),
        ),
        (
            "tone",
            50_000.0,
            [(Some((61, 62)), 1), (Some((72, 72)), 1)],
            Some(0.46),
        ),
        (
            "hovell",
            250_000.0,
            [(Some((320, 320)), 1), (Some((346, 348)), 1)],
            None,
        ),
        ("wilson", 250_000.0, [(None, 1), (None, 2)], None),
    ];
    let config = OptimizerConfig::default();
    for (name, budget, groups, allocation) in rows {
        let study = fixtures::by_name(name).unwrap();
        let cost = study.unit.with_budget(budget).unwrap();
        let report =
            optimize_two_groups(&study.params[0], &study.params[1], &cost, &config).unwrap();
        let designs = report.design.designs();
        let mut ok = true;
        for (d, (sizes, k)) in designs.iter().zip(groups) {
            ok &= match sizes {
                Some((n, big_n)) => close_design(d, n, big_n, k),
                None => d.k_reps == k,
            };
        }
        if let Some(a) = allocation {
            ok &= within(report.design.allocation, a, 0.01 + 1e-9);
        }
        out.push((
            ok,
            format!(
                "{name} ${budget}: allocation {:.2}, group1 {}, group2 {}",
                report.design.allocation,
                fmt(&designs[0]),
                fmt(&designs[1])
            ),
        ));
    }
}

fn budget_search(out: &mut Vec<(bool, String)>) {
    let study = fixtures::hovell();
    let config = OptimizerConfig::default();
    for (power, budget, designs) in [
        (0.8, 1_016_565.0, Some([(1301u64, 1301u64), (1409, 1409)])),
        (0.9, 1_360_757.0, None),
    ] {
        let spec = PowerSpec::new(0.05, power, 0.1).unwrap();
        let search = minimize_budget(
            &study.params[0],
            &study.params[1],
            &study.unit,
            &spec,
            &config,
        )
        .unwrap();
        let got = search.report.design.designs();
        out.push((
            rel(search.budget, budget) <= 0.01,
            format!(
                "power {power}: budget {:.0} vs {budget} ({:.3}% off), initial {:.0}",
                search.budget,
                100.0 * rel(search.budget, budget),
                search.initial_budget
            ),
        ));
        out.push((
            search.iterations <= 3,
            format!(
                "power {power}: {} iteration(s), SE {:.7} vs target {:.7}",
                search.iterations, search.report.se_combined, search.se_target
            ),
        ));
        if let Some(expected) = designs {
            let ok = got.iter().zip(expected).all(|(d, (n, big_n))| {
                rel(d.n_direct as f64, n as f64) <= 0.01
                    && rel(d.n_total as f64, big_n as f64) <= 0.01
                    && d.k_reps == 1
            });
            out.push((
                ok,
                format!(
                    "power {power}: group1 {}, group2 {} within 1%",
                    fmt(&got[0]),
                    fmt(&got[1])
                ),
            ));
            out.push((
                within(search.report.design.allocation, 0.48, 0.01 + 1e-9),
                format!(
                    "power {power}: allocation {:.3}",
                    search.report.design.allocation
                ),
            ));
        }
    }
}

fn thresholds(out: &mut Vec<(bool, String)>) {
    let grid = [
        0.05, 0.1, 0.2, 0.25, 0.4, 0.5, 1.0, 2.0, 2.5, 4.0, 5.0, 10.0, 20.0,
    ];
    let rows = threshold_scan(&grid, 1.0, 200_000.0, &OptimizerConfig::default()).unwrap();
    for row in rows {
        let (a, b) = (row.k1_to_2_ratio(), row.k2_to_3_ratio());
        let ok = a.is_some_and(|a| rel(a, 2.0) <= 0.05) && b.is_some_and(|b| rel(b, 6.0) <= 0.05);
        out.push((
            ok,
            format!(
                "r_CB {:>5}: K 1→2 at r_δ/r_CB = {}, K 2→3 at {}",
                row.r_cb,
                a.map_or("none".into(), |a| format!("{a:.4}")),
                b.map_or("none".into(), |b| format!("{b:.4}"))
            ),
        ));
    }
}

fn efficiency_claims(out: &mut Vec<(bool, String)>) {
    let config = OptimizerConfig::default();
    let budget = 250_000.0;

    let wilson = fixtures::wilson();
    let cost = wilson.unit.with_budget(budget).unwrap();
    let best = optimize_two_groups(&wilson.params[0], &wilson.params[1], &cost, &config).unwrap();
    let k1 = optimize_two_groups_with_k(
        &wilson.params[0],
        &wilson.params[1],
        &cost,
        &config,
        [Some(1), Some(1)],
    )
    .unwrap();
    let eff = efficiency(
        &wilson.params,
        &best.design.designs(),
        &k1.design.designs(),
        config.tie_tolerance,
    )
    .unwrap();
    out.push((
        within(eff.ratio, 0.986, 0.002),
        format!(
            "wilson ${budget} forced K=1: efficiency {:.4} (variance ratio {:.4})",
            eff.ratio, eff.variance_ratio
        ),
    ));

    let multipliers = [0.5, 0.625, 0.75, 0.875, 1.0, 1.25, 1.5, 1.75, 2.0];
    let hovell = fixtures::hovell();
    let cost = hovell.unit.with_budget(budget).unwrap();
    for axis in [SensitivityAxis::Sigma2Eps, SensitivityAxis::RPhi] {
        let rows = sensitivity_scan(hovell.params, 1, axis, &multipliers, &cost, &config).unwrap();
        let min = rows
            .iter()
            .map(|r| r.efficiency)
            .fold(f64::INFINITY, f64::min);
        let listing: Vec<String> = rows
            .iter()
            .map(|r| format!("{}:{:.4}", r.multiplier, r.efficiency))
            .collect();
        out.push((
            min >= 0.975,
            format!(
                "hovell {} scan min {min:.4} [{}]",
                axis.name(),
                listing.join(" ")
            ),
        ));
        if axis == SensitivityAxis::Sigma2Eps {
            let under = rows
                .iter()
                .filter(|r| r.multiplier < 1.0)
                .map(|r| r.efficiency)
                .fold(f64::INFINITY, f64::min);
            let over = rows
                .iter()
                .filter(|r| r.multiplier > 1.0)
                .map(|r| r.efficiency)
                .fold(f64::INFINITY, f64::min);
            out.push((
                under <= over,
                format!("hovell sigma2_eps: under-assessment min {under:.4} vs over-assessment min {over:.4}"),
            ));
        }
    }

    for study in [fixtures::wilson(), fixtures::tone()] {
        let cost = study.unit.with_budget(budget).unwrap();
        let rows = sensitivity_scan(
            study.params,
            1,
            SensitivityAxis::RPhi,
            &multipliers,
            &cost,
            &config,
        )
        .unwrap();
        let min = rows
            .iter()
            .map(|r| r.efficiency)
            .fold(f64::INFINITY, f64::min);
        out.push((
            rows.iter().all(|r| r.efficiency == 1.0),
            format!("{} r_phi scan: min efficiency {min}", study.name),
        ));
    }
}

fn monte_carlo(out: &mut Vec<(bool, String)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut points = vec![(
        ModelParams::new(1.0, 1.0, 1.0).unwrap(),
        Design::new(60, 30, 2).unwrap(),
    )];
    for _ in 0..5 {
        let params = ModelParams::new(
            rng.random_range(0.2..2.0),
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
        )
        .unwrap();
        let n = rng.random_range(10..80u64);
        let design =
            Design::new(n + rng.random_range(0..2 * n), n, rng.random_range(1..4u64)).unwrap();
        points.push((params, design));
    }
    for (i, (params, design)) in points.into_iter().enumerate() {
        let mc = monte_carlo_se(&SimSpec {
            params,
            design,
            mu: 1.0,
            replications: 10_000,
            seed: 100 + i as u64,
        })
        .unwrap();
        out.push((
            mc.z_score().abs() <= 3.0,
            format!(
                "σ²={:.3} r_δ={:.3} r_φ={:.3} {}: empirical {:.5} vs closed form {:.5} ({:+.2} MC errors)",
                params.sigma2_eps(),
                params.r_delta(),
                params.r_phi(),
                fmt(&design),
                mc.empirical_se,
                mc.closed_form_se,
                mc.z_score()
            ),
        ));
    }

    let hovell = fixtures::hovell();
    let spec = TwoGroupSimSpec {
        params: hovell.params,
        designs: [
            Design::new(1301, 1301, 1).unwrap(),
            Design::new(1409, 1409, 1).unwrap(),
        ],
        mu1: 0.0,
        replications: 5_000,
        seed: 31,
    };
    let power = monte_carlo_power(&spec, &PowerSpec::new(0.05, 0.8, 0.1).unwrap()).unwrap();
    out.push((
        (0.78..=0.82).contains(&power.rejection_rate),
        format!(
            "power at the π=0.8 budget design: {:.4} ± {:.4} over {} replicates",
            power.rejection_rate, power.mc_error, power.replications
        ),
    ));
}

fn enumerate_best(params: &ModelParams, cost: &CostModel) -> Option<f64> {
    let mut best: Option<f64> = None;
    let budget = cost.c_total;
    let mut k = 1;
    while (MIN_SUBSAMPLE * k) as f64 * cost.c_b + MIN_SUBSAMPLE as f64 * cost.c_q <= budget {
        let mut n = MIN_SUBSAMPLE;
        while (n * k) as f64 * cost.c_b + n as f64 * cost.c_q <= budget {
            let mut big_n = n;
            while (n * k) as f64 * cost.c_b + big_n as f64 * cost.c_q <= budget {
                let v = var_mu_hat(params, &Design::new(big_n, n, k).unwrap()).unwrap();
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
                big_n += 1;
            }
            n += 1;
        }
        k += 1;
    }
    best
}

fn optimality(out: &mut Vec<(bool, String)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let config = OptimizerConfig::default();
    let mut done = 0;
    while done < 20 {
        let r_cb: f64 = rng.random_range(0.1..5.0);
        let r_c: f64 = rng.random_range(20.0..=300.0);
        let cost = CostModel::new(1.0, r_cb, r_c).unwrap();
        if r_c < cost.unit().minimal_budget() {
            continue;
        }
        done += 1;
        let params = ModelParams::new(
            rng.random_range(0.1..3.0),
            rng.random_range(0.0..8.0),
            rng.random_range(0.0..8.0),
        )
        .unwrap();
        let report = optimize_single_group(&params, &cost, &config).unwrap();
        let brute = enumerate_best(&params, &cost).unwrap();
        out.push((
            rel(report.achieved_variance, brute) <= 1e-12 && cost.cost_of(&report.design) <= r_c,
            format!(
                "r_C={r_c:.1} r_CB={r_cb:.2} r_δ={:.2} r_φ={:.2}: {} variance {:.6e}, enumeration {:.6e}",
                params.r_delta(),
                params.r_phi(),
                fmt(&report.design),
                report.achieved_variance,
                brute
            ),
        ));
    }
}

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (0.05f64..5.0, 0.0f64..10.0, 0.0f64..10.0)
        .prop_map(|(s, rd, rp)| ModelParams::new(s, rd, rp).unwrap())
}

fn design_strategy() -> impl Strategy<Value = Design> {
    (4u64..500, 0u64..500, 1u64..6).prop_map(|(n, extra, k)| Design::new(n + extra, n, k).unwrap())
}

fn property<S: Strategy>(
    out: &mut Vec<(bool, String)>,
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) {
    let mut runner = TestRunner::new(Config {
        cases: 512,
        failure_persistence: None,
        ..Config::default()
    });
    match runner.run(&strategy, test) {
        Ok(()) => out.push((true, format!("{name}: 512 cases"))),
        Err(e) => out.push((false, format!("{name}: {e}"))),
    }
}

fn properties(out: &mut Vec<(bool, String)>) {
    // N is monotone with the sign of (n−2)/(1+r_φ) − (1+r_δ/K): decreasing when
    // the calibration carries information beyond the replicate noise
    property(
        out,
        "variance monotone in N",
        (params_strategy(), design_strategy()),
        |(p, d)| {
            let gain = (d.n_direct as f64 - 2.0) / (1.0 + p.r_phi())
                - (1.0 + p.r_delta() / d.k_reps as f64);
            prop_assume!(gain.abs() > 1e-9);
            let more = Design {
                n_total: d.n_total + 1,
                ..d
            };
            let (v, v_more) = (var_mu_hat(&p, &d).unwrap(), var_mu_hat(&p, &more).unwrap());
            let ordered = if gain > 0.0 { v_more < v } else { v_more > v };
            prop_assert!(ordered);
            Ok(())
        },
    );
    property(
        out,
        "variance decreasing in n",
        (params_strategy(), design_strategy()),
        |(p, d)| {
            let base = Design {
                n_total: d.n_total + 1,
                ..d
            };
            let more = Design {
                n_direct: d.n_direct + 1,
                ..base
            };
            prop_assert!(var_mu_hat(&p, &more).unwrap() < var_mu_hat(&p, &base).unwrap());
            Ok(())
        },
    );
    property(
        out,
        "variance decreasing in K",
        (params_strategy(), design_strategy()),
        |(p, d)| {
            prop_assume!(p.r_delta() > 1e-6);
            let more = Design {
                k_reps: d.k_reps + 1,
                ..d
            };
            prop_assert!(var_mu_hat(&p, &more).unwrap() < var_mu_hat(&p, &d).unwrap());
            Ok(())
        },
    );
    property(
        out,
        "n = N reduction identity",
        (params_strategy(), 4u64..5000, 1u64..6),
        |(p, n, k)| {
            let v = var_mu_hat(&p, &Design::full(n, k).unwrap()).unwrap();
            let expected = p.sigma2_eps() / n as f64 * (1.0 + p.r_delta() / k as f64);
            prop_assert!((v - expected).abs() <= 1e-12 * expected);
            Ok(())
        },
    );
    property(
        out,
        "r_φ invariance at n = N",
        (params_strategy(), 4u64..5000, 1u64..6, 0.0f64..100.0),
        |(p, n, k, rp)| {
            let d = Design::full(n, k).unwrap();
            let other = p.with_r_phi(rp).unwrap();
            prop_assert_eq!(var_mu_hat(&p, &d).unwrap(), var_mu_hat(&other, &d).unwrap());
            Ok(())
        },
    );
    let calibration = (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    });
    property(
        out,
        "μ̂ equals the mean of M̄ when n = N",
        calibration,
        |(q, m_bar)| {
            let Ok(est) = mle_mu_from_summaries(&q, &q, &m_bar) else {
                return Ok(());
            };
            let mean = m_bar.iter().sum::<f64>() / m_bar.len() as f64;
            prop_assert!((est.mu_hat - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            Ok(())
        },
    );
    let config = OptimizerConfig::default();
    property(
        out,
        "optimizer output is feasible",
        (
            params_strategy(),
            params_strategy(),
            0.2f64..10.0,
            500.0f64..20_000.0,
        ),
        |(p1, p2, r_cb, r_c)| {
            let cost = CostModel::new(1.0, r_cb, r_c).unwrap();
            prop_assume!(r_c >= cost.unit().minimal_budget() * 2.0);
            let single = optimize_single_group(&p1, &cost, &config).unwrap();
            prop_assert!(single.design.validate().is_ok());
            prop_assert!(cost.cost_of(&single.design) <= r_c * (1.0 + 1e-12));
            let two = optimize_two_groups(&p1, &p2, &cost, &config).unwrap();
            for d in two.design.designs() {
                prop_assert!(d.validate().is_ok());
            }
            prop_assert!(two.design.cost(&cost.unit()) <= r_c * (1.0 + 1e-12));
            Ok(())
        },
    );
    let small_design = (4u64..60, 0u64..60, 1u64..4)
        .prop_map(|(n, extra, k)| Design::new(n + extra, n, k).unwrap());
    property(
        out,
        "simulation deterministic under seed",
        (params_strategy(), small_design, any::<u64>()),
        |(p, d, seed)| {
            let spec = SimSpec {
                params: p,
                design: d,
                mu: 0.5,
                replications: 1,
                seed,
            };
            prop_assert_eq!(
                simulate_dataset(&spec).unwrap(),
                simulate_dataset(&spec).unwrap()
            );
            Ok(())
        },
    );
}

fn main() -> ExitCode {
    let mut report = Report { failed: Vec::new() };
    report.criterion("SE target", se_target_values);
    report.criterion("case-study designs at fixed budgets", fixed_budget_designs);
    report.criterion("minimum budget for a power target", budget_search);
    report.criterion("replicate-count thresholds", thresholds);
    report.criterion("efficiency and sensitivity", efficiency_claims);
    report.criterion("Monte Carlo oracle", monte_carlo);
    report.criterion("optimality oracle", optimality);
    report.criterion("property suites", properties);
    if report.failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!(
            "acceptance: {} failed: {}",
            report.failed.len(),
            report.failed.join(", ")
        );
        ExitCode::FAILURE
    }
}
