use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use sase_core::analysis::{
    run_experiment, theta_beta_correlation, two_node_limits, two_node_posterior, Algorithm,
    Quantity, Scenario, TwoNodeParams,
};
use sase_core::fixtures;
use sase_core::measure::simulate_pmu_stream;
use sase_core::{ClockError, GridState, MeasurementConfig, Placement};

/// OLS of the angle residual on `[1, spacing·t]`: returns
/// `(β̂, α̂, se(β̂), se(α̂))` for known angle noise `sigma`.
fn fit_clock(residual: &[f64], spacing: f64, sigma: f64) -> (f64, f64, f64, f64) {
    let m = residual.len() as f64;
    let xs: Vec<f64> = (0..residual.len()).map(|t| t as f64 * spacing).collect();
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = residual.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(residual)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let alpha = sxy / sxx;
    let beta = ybar - alpha * xbar;
    let se_alpha = sigma / sxx.sqrt();
    let se_beta = sigma * (1.0 / m + xbar * xbar / sxx).sqrt();
    (beta, alpha, se_beta, se_alpha)
}

#[test]
fn desync_regression_recovers_injected_clock() {
    let cfg = MeasurementConfig::default();
    let truth = GridState {
        v: vec![1.0, 0.97],
        theta: vec![0.0, -0.08],
        p: vec![0.1, -0.1],
        q: vec![0.03, -0.03],
    };
    let placement = Placement::new(vec![1], 2, 0).unwrap();
    let clock = ClockError {
        alpha: 4e-3,
        beta: -3e-4,
    };
    let n = 10_000;
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let (mut za, mut zb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let frames = simulate_pmu_stream(&truth, &placement, &[clock], &[0.97], &cfg, k, &mut rng);
        let residual: Vec<f64> = frames
            .iter()
            .map(|f| f.theta_meas[0] - truth.theta[1])
            .collect();
        let (b, a, sb, sa) = fit_clock(&residual, cfg.sample_spacing(), cfg.sigma_pmu_theta);
        za.push((a - clock.alpha) / sa);
        zb.push((b - clock.beta) / sb);
    }
    for z in [&za, &zb] {
        let inside = z.iter().filter(|v| v.abs() <= 3.0).count() as f64 / n as f64;
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(inside >= 0.995, "{inside}");
        assert!(mean.abs() * (n as f64).sqrt() < 3.0, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}

#[test]
fn two_node_posterior_approaches_limit() {
    let p = TwoNodeParams {
        samples: 10_000,
        ..TwoNodeParams::table1()
    };
    let sigma = two_node_posterior(&p);
    let lim = two_node_limits(&p).limit;
    assert!(theta_beta_correlation(&sigma) <= -0.99);
    assert!((sigma[(1, 1)] / lim[(1, 1)] - 1.0).abs() < 0.01);
    assert!((sigma[(0, 0)] / lim[(0, 0)] - 1.0).abs() < 0.01);
}

#[test]
fn two_node_skew_variance_scales_inversely_with_samples_and_period_squared() {
    let lim = two_node_limits(&TwoNodeParams::table1());
    let mut scaled = Vec::new();
    for m in [1_000usize, 10_000, 100_000] {
        scaled.push(lim.sigma33(m, 1.0) * m as f64);
    }
    for t in [1.0, 2.0, 4.0] {
        scaled.push(lim.sigma33(1_000, t) * 1_000.0 * t * t);
    }
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    let spread = scaled.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean;
    assert!(spread < 0.05, "{scaled:?}");
}

fn six_bus_scenario(runs: usize) -> Scenario {
    Scenario {
        id: "six".into(),
        network: fixtures::six_bus(),
        config: MeasurementConfig::default(),
        placement: Placement::from_ids(&[5, 3, 6, 2, 4], 6, 0).unwrap(),
        pmu_counts: vec![1, 2, 3, 4, 5],
        samples: vec![30],
        algorithms: Algorithm::ALL.to_vec(),
        runs,
        seed: 11,
        keep_runs: false,
    }
}

#[test]
fn ground_truth_bounds_sync_aware_bounds_blind() {
    let result = run_experiment(&six_bus_scenario(50)).unwrap();
    for k in 1..=5 {
        let v = |a| {
            result
                .final_value(a, k, 30, Quantity::Voltage)
                .unwrap()
                .theoretical
        };
        assert!(
            v(Algorithm::Gt) <= v(Algorithm::Sase) * (1.0 + 1e-9),
            "k={k}"
        );
        assert!(v(Algorithm::Sase) < v(Algorithm::Blse), "k={k}");
        assert!(v(Algorithm::Sase) < result.prior_voltage_armse);
    }
}

#[test]
fn empirical_error_tracks_theory() {
    let result = run_experiment(&six_bus_scenario(2_000)).unwrap();
    for alg in Algorithm::ALL {
        for k in [1, 3, 5] {
            let r = result.final_value(alg, k, 30, Quantity::Voltage).unwrap();
            let dev = (r.empirical / r.theoretical - 1.0).abs();
            assert!(
                dev < 0.06,
                "{alg} k={k}: {} vs {}",
                r.empirical,
                r.theoretical
            );
        }
    }
}
