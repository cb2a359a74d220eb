use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use sase_core::analysis::{two_node_posterior, TwoNodeParams};
use sase_core::estimator::{
    blse_run, build_state_space, gt_run, mismatched_riccati, offline_schedule, recover_voltages,
    resync, run_frames, FilterState, ResyncMode, StateSpaceModel, Variant,
};
use sase_core::fixtures;
use sase_core::linalg::{asymmetry, min_eigenvalue};
use sase_core::measure::{draw_clock, simulate_pmu_stream};
use sase_core::powerflow::PowerFlowOptions;
use sase_core::{
    solve_power_flow, tangent_matrix, ClockError, LinearModel, MeasurementConfig, Placement,
    PmuFrame,
};

fn six_bus_model() -> LinearModel {
    let net = fixtures::six_bus();
    let (p, q) = net.nominal_injections();
    let op = solve_power_flow(&net, &p, &q, &PowerFlowOptions::default()).unwrap();
    tangent_matrix(&net, &op).unwrap()
}

fn placement(ids: &[usize]) -> Placement {
    Placement::from_ids(ids, 6, 0).unwrap()
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max()
}

fn frames_from(ys: &[DVector<f64>], m: usize) -> Vec<PmuFrame> {
    ys.iter()
        .enumerate()
        .map(|(t, y)| PmuFrame {
            k: 0,
            t,
            v_meas: y.rows(0, m).iter().copied().collect(),
            theta_meas: y.rows(m, m).iter().copied().collect(),
        })
        .collect()
}

fn random_model(rng: &mut ChaCha12Rng) -> StateSpaceModel {
    let nl = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let samples = rng.random_range(2..=30);
    let g = DMatrix::from_fn(2 * m, 2 * nl, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(2 * nl, 2 * nl, |_, _| rng.random_range(-1.0..1.0));
    let prior = &a * a.transpose() + DMatrix::identity(2 * nl, 2 * nl) * 0.1;
    let r: Vec<f64> = (0..2 * m).map(|_| rng.random_range(0.01..1.0)).collect();
    StateSpaceModel::from_parts(
        g,
        prior,
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
        &r,
        rng.random_range(0.5..2.0),
        samples,
        Variant::SyncAware,
        ResyncMode::Reset,
        DVector::zeros(2 * m),
    )
    .unwrap()
}

#[test]
fn recursion_equals_batch_information_form() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    for case in 0..50 {
        let ssm = random_model(&mut rng);
        let sched = offline_schedule(&ssm).unwrap();
        let r_inv = ssm.measurement_noise().clone().try_inverse().unwrap();
        let mut info = ssm.sigma0().clone().try_inverse().unwrap();
        let mut score = DVector::zeros(ssm.dim());
        let ys: Vec<DVector<f64>> = (0..ssm.samples())
            .map(|_| DVector::from_fn(2 * ssm.m(), |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        for (t, y) in ys.iter().enumerate() {
            let h = ssm.h(t);
            info += h.transpose() * &r_inv * &h;
            score += h.transpose() * &r_inv * y;
        }
        let batch = info.try_inverse().unwrap();
        let batch_mean = &batch * score;
        let err = rel_err(&sched.covariances[ssm.samples()], &batch);
        assert!(err <= 1e-9, "case {case}: covariance error {err:e}");

        let traj = run_frames(&ssm, &sched, &frames_from(&ys, ssm.m())).unwrap();
        let x = &traj.states.last().unwrap().x_hat;
        let err = (x - &batch_mean).amax() / batch_mean.amax();
        assert!(err <= 1e-9, "case {case}: mean error {err:e}");
    }
}

#[test]
fn two_node_kalman_matches_closed_form() {
    let p = TwoNodeParams::table1();
    // State (δp, δq, α, β); the magnitude channel reads δq only.
    let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let prior = DMatrix::from_diagonal(&DVector::from_vec(vec![p.sigma_theta.powi(2), 1.0]));
    let ssm = StateSpaceModel::from_parts(
        g,
        prior,
        p.sigma_alpha,
        p.sigma_beta,
        &[1.0, p.sigma_r.powi(2)],
        p.period,
        p.samples,
        Variant::SyncAware,
        ResyncMode::Reset,
        DVector::zeros(2),
    )
    .unwrap();
    for t in 0..p.samples {
        let row = ssm.h(t);
        let expected = [1.0, 0.0, t as f64 * p.period / (p.samples - 1) as f64, 1.0];
        for (a, b) in row.row(1).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    let sigma = &offline_schedule(&ssm).unwrap().covariances[p.samples];
    let idx = [0, 3, 2];
    let kalman = DMatrix::from_fn(3, 3, |i, j| sigma[(idx[i], idx[j])]);
    let closed = two_node_posterior(&p);
    let closed = DMatrix::from_fn(3, 3, |i, j| closed[(i, j)]);
    assert!(rel_err(&kalman, &closed) <= 1e-9, "{kalman}\n{closed}");
}

#[test]
fn covariances_are_symmetric_psd_and_shrinking() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    for ids in [vec![2], vec![6, 3], vec![2, 3, 4, 5, 6]] {
        let ssm = build_state_space(
            &model,
            &placement(&ids),
            &cfg,
            Variant::SyncAware,
            ResyncMode::Reset,
        )
        .unwrap();
        let sched = offline_schedule(&ssm).unwrap();
        assert_eq!(sched.covariances.len(), cfg.samples + 1);
        let mut last = f64::INFINITY;
        for s in &sched.covariances {
            assert!(asymmetry(s) <= 1e-12);
            assert!(min_eigenvalue(s) >= -1e-10);
            let tr = s.trace();
            assert!(tr <= last * (1.0 + 1e-12), "{tr} > {last}");
            last = tr;
        }
        let mut last_alpha = f64::INFINITY;
        for s in &sched.covariances {
            let a = s[(ssm.alpha_offset(), ssm.alpha_offset())];
            assert!(a <= last_alpha);
            last_alpha = a;
        }
        assert!(last_alpha < cfg.sigma_alpha.powi(2));
        assert_eq!(offline_schedule(&ssm).unwrap(), sched);
    }
}

#[test]
fn gains_are_invariant_to_common_scaling() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    let ssm = build_state_space(
        &model,
        &placement(&[3, 5]),
        &cfg,
        Variant::SyncAware,
        ResyncMode::Reset,
    )
    .unwrap()
    .with_process_noise(DMatrix::identity(14, 14) * 1e-10)
    .unwrap();
    let base = offline_schedule(&ssm).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let ys: Vec<DVector<f64>> = (0..cfg.samples)
        .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1e-3..1e-3)))
        .collect();
    let frames = frames_from(&ys, 2)
        .into_iter()
        .map(|mut f| {
            let nominal = ssm.nominal_measurement();
            for i in 0..2 {
                f.v_meas[i] += nominal[i];
                f.theta_meas[i] += nominal[i + 2];
            }
            f
        })
        .collect::<Vec<_>>();
    let x_base = run_frames(&ssm, &base, &frames).unwrap();
    for c in [0.25, 4.0, 1024.0] {
        let scaled = ssm.scaled(c);
        let sched = offline_schedule(&scaled).unwrap();
        for (a, b) in sched.gains.iter().zip(&base.gains) {
            assert!(rel_err(a, b) < 1e-12);
        }
        let x = run_frames(&scaled, &sched, &frames).unwrap();
        for (a, b) in x.states.iter().zip(&x_base.states) {
            assert!((&a.x_hat - &b.x_hat).amax() <= 1e-12 * b.x_hat.amax());
        }
    }
}

#[test]
fn noiseless_full_placement_recovers_voltages() {
    let net = fixtures::six_bus();
    let model = six_bus_model();
    let mut cfg = MeasurementConfig {
        sigma_pmu_v: 1e-7,
        sigma_pmu_theta: 1e-7,
        ..MeasurementConfig::default()
    };
    let ssm = build_state_space(
        &model,
        &placement(&[2, 3, 4, 5, 6]),
        &cfg,
        Variant::Blind,
        ResyncMode::Reset,
    )
    .unwrap();
    let sched = offline_schedule(&ssm).unwrap();
    let (mut p, mut q) = net.nominal_injections();
    for h in 1..6 {
        p[h] *= 1.0 + 0.01 * h as f64;
        q[h] *= 1.0 - 0.01 * h as f64;
    }
    let truth = solve_power_flow(&net, &p, &q, &PowerFlowOptions::default())
        .unwrap()
        .state;
    cfg.sigma_pmu_v = 0.0;
    cfg.sigma_pmu_theta = 0.0;
    let clocks = vec![ClockError::default(); 5];
    let v_nom: Vec<f64> = (1..6).map(|h| model.point().state.v[h]).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let frames = simulate_pmu_stream(
        &truth,
        &placement(&[2, 3, 4, 5, 6]),
        &clocks,
        &v_nom,
        &cfg,
        0,
        &mut rng,
    );
    let traj = run_frames(&ssm, &sched, &frames).unwrap();
    let last = traj.states.last().unwrap();
    let est = recover_voltages(&last.x_hat, traj.covariance(cfg.samples - 1), &model);
    for h in 0..6 {
        assert!((est.v_hat[h] - truth.v[h]).abs() <= 1e-4, "bus {h}");
        assert!((est.theta_hat[h] - truth.theta[h]).abs() <= 1e-4, "bus {h}");
    }
}

#[test]
fn pure_offset_is_explained_by_the_model() {
    let net = fixtures::two_bus();
    let op = solve_power_flow(
        &net,
        &[0.0, -0.1],
        &[0.0, -0.02],
        &PowerFlowOptions::default(),
    )
    .unwrap();
    let model = tangent_matrix(&net, &op).unwrap();
    let cfg = MeasurementConfig {
        sigma_pmu_v: 1e-7,
        sigma_pmu_theta: 1e-7,
        samples: 400,
        ..MeasurementConfig::default()
    };
    let place = Placement::from_ids(&[2], 2, 0).unwrap();
    let ssm =
        build_state_space(&model, &place, &cfg, Variant::SyncAware, ResyncMode::Reset).unwrap();
    let sched = offline_schedule(&ssm).unwrap();
    let clocks = [ClockError {
        alpha: 0.0,
        beta: 1e-3,
    }];
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let noiseless = cfg.noiseless();
    let frames = simulate_pmu_stream(
        &op.state,
        &place,
        &clocks,
        &[op.state.v[1]],
        &noiseless,
        0,
        &mut rng,
    );
    let traj = run_frames(&ssm, &sched, &frames).unwrap();
    let x = &traj.states.last().unwrap().x_hat;
    for f in &frames {
        let y = DVector::from_vec(vec![f.v_meas[0], f.theta_meas[0]]) - ssm.nominal_measurement();
        let residual = (y - ssm.h(f.t) * x).amax();
        assert!(residual < 1e-8, "t={}: {residual:e}", f.t);
    }
    let s = model.sensitivity();
    let explained = s[(1, 0)] * x[0] + s[(1, 1)] * x[1] + x[ssm.beta_offset()];
    assert!((explained - 1e-3).abs() < 1e-8);
}

#[test]
fn integrate_mode_carries_skew_into_offset() {
    let model = six_bus_model();
    let cfg = MeasurementConfig {
        period: 1.0,
        ..MeasurementConfig::default()
    };
    let ssm = build_state_space(
        &model,
        &placement(&[4]),
        &cfg,
        Variant::SyncAware,
        ResyncMode::Integrate,
    )
    .unwrap();
    let mut x = DVector::zeros(ssm.dim());
    x[ssm.alpha_offset()] = 1e-2;
    let fs = FilterState {
        x_hat: x,
        k: 0,
        t: cfg.samples,
    };
    let sched = offline_schedule(&ssm).unwrap();
    let (next, sigma) = resync(&fs, &sched.covariances[cfg.samples], &ssm);
    assert_eq!(next.x_hat[ssm.beta_offset()], 1e-2);
    assert_eq!(next.x_hat[ssm.alpha_offset()], 1e-2);
    assert_eq!((next.k, next.t), (1, 0));
    assert!(min_eigenvalue(&sigma) >= -1e-12);
    assert!(asymmetry(&sigma) <= 1e-15);
}

#[test]
fn multi_interval_runs() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    let place = placement(&[3, 6]);
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let clocks = draw_clock(&cfg, 2, &mut rng);
    let v_nom = vec![model.point().state.v[2], model.point().state.v[5]];
    let mut frames = Vec::new();
    for k in 0..3 {
        frames.extend(simulate_pmu_stream(
            &model.point().state,
            &place,
            &clocks,
            &v_nom,
            &cfg,
            k,
            &mut rng,
        ));
    }
    for mode in [ResyncMode::Reset, ResyncMode::Integrate] {
        let ssm = build_state_space(&model, &place, &cfg, Variant::SyncAware, mode).unwrap();
        let sched = offline_schedule(&ssm).unwrap();
        let traj = run_frames(&ssm, &sched, &frames).unwrap();
        assert_eq!(traj.states.len(), 3 * cfg.samples);
        assert_eq!(traj.schedules.len(), 3);
        if mode == ResyncMode::Reset {
            assert!(traj.schedules.iter().all(|s| *s == sched));
        } else {
            let a = ssm.alpha_offset();
            assert!(traj.schedules[2].covariances[0][(a, a)] < sched.covariances[0][(a, a)]);
        }
    }
}

#[test]
fn recover_voltages_at_prior() {
    let model = six_bus_model();
    let cfg = MeasurementConfig::default();
    let ssm = build_state_space(
        &model,
        &placement(&[2]),
        &cfg,
        Variant::SyncAware,
        ResyncMode::Reset,
    )
    .unwrap();
    let est = recover_voltages(&DVector::zeros(ssm.dim()), ssm.sigma0(), &model);
    assert_eq!(est.v_hat, model.point().state.v);
    assert_eq!(est.theta_hat, model.point().state.theta);
    let s = model.sensitivity();
    let expected = s * ssm.demand_block(ssm.sigma0()) * s.transpose();
    assert!(rel_err(&est.sigma_u, &expected) < 1e-12);
    assert!(min_eigenvalue(&est.sigma_u) >= -1e-15);

    let net = fixtures::two_bus();
    let op = solve_power_flow(&net, &[0.0; 2], &[0.0; 2], &PowerFlowOptions::default()).unwrap();
    let two = tangent_matrix(&net, &op).unwrap();
    let est = recover_voltages(
        &DVector::from_vec(vec![0.05, 0.0]),
        &DMatrix::identity(2, 2),
        &two,
    );
    assert!((est.theta_hat[1] - 0.05).abs() < 1e-15);
}

fn blind_setup(
    cfg: &MeasurementConfig,
) -> (LinearModel, StateSpaceModel, Vec<PmuFrame>, Vec<ClockError>) {
    let model = six_bus_model();
    let place = placement(&[2, 5]);
    let ssm = build_state_space(&model, &place, cfg, Variant::Blind, ResyncMode::Reset).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let clocks = draw_clock(cfg, 2, &mut rng);
    let v_nom = vec![model.point().state.v[1], model.point().state.v[4]];
    let frames = simulate_pmu_stream(
        &model.point().state,
        &place,
        &clocks,
        &v_nom,
        cfg,
        0,
        &mut rng,
    );
    (model, ssm, frames, clocks)
}

#[test]
fn baselines_agree_without_desync() {
    let cfg = MeasurementConfig {
        sigma_alpha: 0.0,
        sigma_beta: 0.0,
        ..MeasurementConfig::default()
    };
    let (_, ssm, frames, clocks) = blind_setup(&cfg);
    let sched = offline_schedule(&ssm).unwrap();
    let gt = gt_run(&frames, &clocks, &ssm, &sched).unwrap();
    let blse = blse_run(&frames, &ssm, &sched).unwrap();
    assert_eq!(gt.states, blse.states);

    let truth = mismatched_riccati(&ssm, &sched, 0.0, 0.0);
    for (a, b) in truth.iter().zip(&sched.covariances) {
        assert!((a - b).abs().max() <= 1e-15);
    }
}

#[test]
fn mismatched_covariance_dominates_nominal() {
    let cfg = MeasurementConfig::default();
    let (_, ssm, frames, clocks) = blind_setup(&cfg);
    let sched = offline_schedule(&ssm).unwrap();
    let truth = mismatched_riccati(&ssm, &sched, cfg.sigma_alpha, cfg.sigma_beta);
    assert_eq!(truth.len(), sched.covariances.len());
    for (a, b) in truth.iter().zip(&sched.covariances).skip(1) {
        assert!(min_eigenvalue(&(a - b)) >= -1e-15);
        assert!(a.trace() > b.trace());
    }
    let sase = build_state_space(
        &six_bus_model(),
        &placement(&[2, 5]),
        &cfg,
        Variant::SyncAware,
        ResyncMode::Reset,
    )
    .unwrap();
    assert!(gt_run(&frames, &clocks, &sase, &sched).is_err());
    assert!(blse_run(&frames, &sase, &sched).is_err());
}
