use calidesign::estimation::{estimate_params, EstimateOptions, GroupEstimates};
use calidesign::model::{Design, ModelParams};
use calidesign::simulation::{simulate_dataset, SimSpec};

const TRUTH: [f64; 5] = [1.63, 0.84, 0.551, 0.692, 0.237];
const MU: f64 = 2.0;

fn truth() -> ModelParams {
    ModelParams::from_raw(TRUTH[0], TRUTH[1], TRUTH[2], TRUTH[3], TRUTH[4]).unwrap()
}

fn values(e: &GroupEstimates) -> [f64; 5] {
    [
        e.alpha0.value,
        e.alpha1.value,
        e.sigma2_eps.value,
        e.sigma2_phi.value,
        e.sigma2_delta.value,
    ]
}

fn estimates(design: Design, reps: u64, seed_base: u64) -> Vec<[f64; 5]> {
    (0..reps)
        .map(|r| {
            let spec = SimSpec {
                params: truth(),
                design,
                mu: MU,
                replications: 1,
                seed: seed_base + r,
            };
            let data = simulate_dataset(&spec).unwrap();
            values(&estimate_params(&data, 1, &EstimateOptions::default()).unwrap())
        })
        .collect()
}

#[test]
fn recovers_simulation_truth() {
    let runs = estimates(Design::full(500, 3).unwrap(), 200, 1_000);
    let names = [
        "alpha0",
        "alpha1",
        "sigma2_eps",
        "sigma2_phi",
        "sigma2_delta",
    ];
    for i in 0..5 {
        let xs: Vec<f64> = runs.iter().map(|r| r[i]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        let se = sd / (xs.len() as f64).sqrt();
        assert!(
            (m - TRUTH[i]).abs() <= 3.0 * se,
            "{}: mean {m} vs {} (simulation SE {se})",
            names[i],
            TRUTH[i]
        );
    }
}

#[test]
fn error_shrinks_with_sample_size() {
    let mae = |n: u64| -> [f64; 5] {
        let runs = estimates(Design::full(n, 2).unwrap(), 100, 50_000 + n);
        let mut out = [0.0; 5];
        for r in &runs {
            for i in 0..5 {
                out[i] += (r[i] - TRUTH[i]).abs() / runs.len() as f64;
            }
        }
        out
    };
    let (small, mid, large) = (mae(100), mae(400), mae(1600));
    for i in 0..5 {
        assert!(
            small[i] > mid[i] && mid[i] > large[i],
            "parameter {i}: {small:?} {mid:?} {large:?}"
        );
    }
}

#[test]
fn indirect_moments_match_model() {
    let spec = SimSpec {
        params: truth(),
        design: Design::full(500, 3).unwrap(),
        mu: MU,
        replications: 1,
        seed: 9,
    };
    let q = simulate_dataset(&spec).unwrap().observations(1).q_all;
    let n = q.len() as f64;
    let mean = q.iter().sum::<f64>() / n;
    let var = q.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected_mean = TRUTH[0] + TRUTH[1] * MU;
    let expected_var = TRUTH[1] * TRUTH[1] * TRUTH[2] + TRUTH[3];
    assert!((mean - expected_mean).abs() <= 3.0 * (expected_var / n).sqrt());
    // a normal sample variance has SE sqrt(2/(n−1)) σ²
    assert!((var - expected_var).abs() <= 3.0 * expected_var * (2.0 / (n - 1.0)).sqrt());
}
