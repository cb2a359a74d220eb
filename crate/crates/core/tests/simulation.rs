use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use sase_core::analysis::{
    greedy_placement, placement_score, run_experiment, run_experiment_with_threads, Algorithm,
    Quantity, Scenario,
};
use sase_core::estimator::demand_prior;
use sase_core::fixtures;
use sase_core::measure::{
    draw_clock, draw_demand_truth, read_stream_csv, simulate_pmu_stream, write_stream_csv,
};
use sase_core::powerflow::PowerFlowOptions;
use sase_core::rng::{stream, Purpose};
use sase_core::{solve_power_flow, tangent_matrix, LinearModel, MeasurementConfig, Placement};

fn six_bus_model() -> LinearModel {
    let net = fixtures::six_bus();
    let (p, q) = net.nominal_injections();
    let op = solve_power_flow(&net, &p, &q, &PowerFlowOptions::default()).unwrap();
    tangent_matrix(&net, &op).unwrap()
}

#[test]
fn demand_draws_match_prior_covariance() {
    let net = fixtures::six_bus();
    let (p, q) = net.nominal_injections();
    let loads = net.load_indices();
    let cfg = MeasurementConfig::default();
    let prior = demand_prior(
        &loads.iter().map(|&h| p[h]).collect::<Vec<_>>(),
        &loads.iter().map(|&h| q[h]).collect::<Vec<_>>(),
        &cfg,
    );
    let nl = loads.len();
    let n = 20_000;
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut cov = DMatrix::zeros(2 * nl, 2 * nl);
    for _ in 0..n {
        let (pd, qd) = draw_demand_truth(&p, &q, &loads, &cfg, &mut rng);
        let x = nalgebra::DVector::from_iterator(
            2 * nl,
            loads
                .iter()
                .map(|&h| pd[h] - p[h])
                .chain(loads.iter().map(|&h| qd[h] - q[h])),
        );
        cov += &x * x.transpose();
    }
    cov /= n as f64;
    for i in 0..2 * nl {
        for j in 0..2 * nl {
            let expected = prior[(i, j)];
            let scale = (prior[(i, i)] * prior[(j, j)]).sqrt();
            assert!(
                (cov[(i, j)] - expected).abs() < 0.04 * scale,
                "({i},{j}): {} vs {expected}",
                cov[(i, j)]
            );
        }
    }
}

#[test]
fn clock_draws_have_configured_spread() {
    let cfg = MeasurementConfig::default();
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let clocks = draw_clock(&cfg, 40_000, &mut rng);
    let sa = (clocks.iter().map(|c| c.alpha * c.alpha).sum::<f64>() / clocks.len() as f64).sqrt();
    let sb = (clocks.iter().map(|c| c.beta * c.beta).sum::<f64>() / clocks.len() as f64).sqrt();
    assert!((sa / cfg.sigma_alpha - 1.0).abs() < 0.02);
    assert!((sb / cfg.sigma_beta - 1.0).abs() < 0.02);
}

#[test]
fn stream_csv_round_trip_on_fixture() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    let place = Placement::from_ids(&[6, 2], 6, 0).unwrap();
    let mut rng = stream(3, 0, Purpose::PmuNoise, 0);
    let clocks = draw_clock(&cfg, 2, &mut rng);
    let v_nom = [model.point().state.v[1], model.point().state.v[5]];
    let frames = simulate_pmu_stream(
        &model.point().state,
        &place,
        &clocks,
        &v_nom,
        &cfg,
        0,
        &mut rng,
    );
    let mut buf = Vec::new();
    write_stream_csv(&frames, &place.measured(), &mut buf).unwrap();
    let back = read_stream_csv(buf.as_slice(), &place.measured(), cfg.samples).unwrap();
    assert_eq!(back, frames);
}

#[test]
fn greedy_single_pmu_matches_exhaustive_search() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    let greedy = greedy_placement(&model, &cfg, 1).unwrap();
    let mut best = (f64::INFINITY, 0);
    for h in 1..6 {
        let score = placement_score(&model, &cfg, &Placement::new(vec![h], 6, 0).unwrap()).unwrap();
        if score < best.0 {
            best = (score, h);
        }
    }
    assert_eq!(greedy.buses(), &[best.1]);
}

#[test]
fn greedy_exhausts_load_buses() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    let all = greedy_placement(&model, &cfg, 5).unwrap();
    assert_eq!(all.measured(), vec![1, 2, 3, 4, 5]);
    assert!(greedy_placement(&model, &cfg, 6).is_err());

    let net = fixtures::two_bus();
    let op = solve_power_flow(
        &net,
        &[0.0, -0.1],
        &[0.0, -0.05],
        &PowerFlowOptions::default(),
    )
    .unwrap();
    let two = tangent_matrix(&net, &op).unwrap();
    assert_eq!(greedy_placement(&two, &cfg, 1).unwrap().buses(), &[1]);
}

fn small_scenario(cfg: MeasurementConfig, runs: usize) -> Scenario {
    Scenario {
        id: "small".into(),
        network: fixtures::six_bus(),
        config: cfg,
        placement: Placement::from_ids(&[5, 3, 6, 2, 4], 6, 0).unwrap(),
        pmu_counts: vec![0, 1, 3],
        samples: vec![10, 20],
        algorithms: Algorithm::ALL.to_vec(),
        runs,
        seed: 42,
        keep_runs: false,
    }
}

#[test]
fn zero_noise_gives_zero_error() {
    let cfg = MeasurementConfig::default().noiseless();
    let result = run_experiment(&small_scenario(cfg, 3)).unwrap();
    assert!(!result.records.is_empty());
    for r in &result.records {
        assert_eq!(r.empirical, 0.0, "{r:?}");
    }
}

#[test]
fn experiment_is_deterministic_across_pools() {
    let scenario = small_scenario(MeasurementConfig::default(), 24);
    let a = run_experiment_with_threads(&scenario, 1).unwrap();
    let b = run_experiment_with_threads(&scenario, 4).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    let header = a.to_csv_string().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "scenario_id,algorithm,pmu_count,M,t,quantity,armse_empirical,armse_theoretical,n_runs,seed"
    );
}

#[test]
fn experiment_layout() {
    let result = run_experiment(&small_scenario(MeasurementConfig::default(), 8)).unwrap();
    // No PMU: the filter keeps the prior, so every t reports the prior ARMSE.
    for alg in Algorithm::ALL {
        let curve = result.curve(alg, 0, 20, Quantity::Voltage);
        assert_eq!(curve.len(), 20);
        for r in curve {
            assert!((r.theoretical - result.prior_voltage_armse).abs() < 1e-15);
        }
    }
    assert!(result
        .curve(Algorithm::Sase, 0, 20, Quantity::Alpha)
        .is_empty());
    assert_eq!(
        result.curve(Algorithm::Sase, 3, 10, Quantity::Beta).len(),
        10
    );
    assert!(result
        .curve(Algorithm::Gt, 3, 10, Quantity::Alpha)
        .is_empty());
    let summary = result.summary();
    assert!(summary
        .final_values
        .iter()
        .filter(|e| e.quantity == Quantity::Voltage)
        .all(|e| e.improvement_vs_prior.is_some()));
    let gt = result
        .final_value(Algorithm::Gt, 3, 20, Quantity::Voltage)
        .unwrap();
    assert!(gt.theoretical < result.prior_voltage_armse);
}
