//! Monte-Carlo ARMSE experiments.
//!
//! Each run draws a demand realization, solves the nonlinear power flow for
//! the true voltages, draws clock errors and PMU noise for every load bus,
//! and feeds the same readings (restricted to each placement) to every
//! algorithm. Runs are independent and results are reduced in run order, so
//! the output depends only on the seed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{voltage_covariance, AnalysisError};
use crate::estimator::{
    blse_run, build_state_space, demand_prior, gt_run, mismatched_riccati, offline_schedule,
    run_frames, GainSchedule, ResyncMode, StateSpaceModel, Trajectory, Variant, PRIOR_JITTER,
};
use crate::linearize::{tangent_matrix, LinearModel};
use crate::measure::{
    draw_clock, draw_demand_truth, simulate_pmu_stream, ClockError, MeasurementConfig, Placement,
    PmuFrame,
};
use crate::network::Network;
use crate::powerflow::{solve_power_flow, GridState, OperatingPoint, PowerFlowOptions};
use crate::rng::{stream, Purpose};

/// Power-flow attempts per run before the experiment gives up.
const MAX_ATTEMPTS: u32 = 20;

/// PMU noise variance assumed by the filter when the configured std is
/// (close to) zero, relative to the largest prior voltage variance.
pub const NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sase,
    Gt,
    Blse,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Sase, Algorithm::Gt, Algorithm::Blse];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sase => "sase",
            Algorithm::Gt => "gt",
            Algorithm::Blse => "blse",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sase" => Ok(Algorithm::Sase),
            "gt" => Ok(Algorithm::Gt),
            "blse" => Ok(Algorithm::Blse),
            other => Err(format!("unknown algorithm `{other}` (sase|gt|blse)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Stacked magnitudes and angles at the load buses.
    Voltage,
    VMag,
    VAngle,
    Alpha,
    Beta,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Voltage => "voltage",
            Quantity::VMag => "v_mag",
            Quantity::VAngle => "v_angle",
            Quantity::Alpha => "alpha",
            Quantity::Beta => "beta",
        }
    }

    fn for_algorithm(alg: Algorithm, m: usize) -> &'static [Quantity] {
        const VOLTAGE: [Quantity; 3] = [Quantity::Voltage, Quantity::VMag, Quantity::VAngle];
        const ALL: [Quantity; 5] = [
            Quantity::Voltage,
            Quantity::VMag,
            Quantity::VAngle,
            Quantity::Alpha,
            Quantity::Beta,
        ];
        if alg == Algorithm::Sase && m > 0 {
            &ALL
        } else {
            &VOLTAGE
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub network: Network,
    pub config: MeasurementConfig,
    /// PMU order; a PMU count `k` uses the first `k` buses.
    pub placement: Placement,
    pub pmu_counts: Vec<usize>,
    /// Values of `M` to sweep; `config.samples` when empty.
    pub samples: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub runs: usize,
    pub seed: u64,
    /// Keep per-run squared errors in the result (needed for paired tests).
    pub keep_runs: bool,
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmseRecord {
    pub algorithm: Algorithm,
    pub pmu_count: usize,
    pub samples: usize,
    pub t: usize,
    pub quantity: Quantity,
    pub empirical: f64,
    pub theoretical: f64,
    /// Monte-Carlo standard error of `empirical`.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scenario_id: String,
    pub seed: u64,
    pub runs: usize,
    /// Runs whose first demand draw had no power-flow solution.
    pub resampled: usize,
    /// Theoretical voltage ARMSE with no PMU (the prior).
    pub prior_voltage_armse: f64,
    pub records: Vec<ArmseRecord>,
    /// Per-run mean squared errors aligned with `records`, when kept.
    pub run_errors: Option<Vec<Vec<f64>>>,
}

/// Least-squares slope of an ARMSE curve with its paired Monte-Carlo
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeTest {
    pub slope: f64,
    pub std_error: f64,
}

impl SlopeTest {
    /// Slope in units of its standard error.
    pub fn z(&self) -> f64 {
        self.slope / self.std_error
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario_id: &'a str,
    algorithm: &'static str,
    pmu_count: usize,
    #[serde(rename = "M")]
    samples: usize,
    t: usize,
    quantity: &'static str,
    armse_empirical: f64,
    armse_theoretical: f64,
    n_runs: usize,
    seed: u64,
}

/// End-of-interval values for one curve.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    pub algorithm: Algorithm,
    pub pmu_count: usize,
    #[serde(rename = "M")]
    pub samples: usize,
    pub quantity: Quantity,
    pub armse_empirical: f64,
    pub armse_theoretical: f64,
    /// `1 − ARMSE / prior ARMSE`, voltage only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement_vs_prior: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub scenario_id: String,
    pub seed: u64,
    pub n_runs: usize,
    pub resampled_runs: usize,
    pub prior_voltage_armse: f64,
    pub final_values: Vec<SummaryEntry>,
}

impl ExperimentResult {
    /// Long-format CSV, one row per record.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(CsvRow {
                scenario_id: &self.scenario_id,
                algorithm: r.algorithm.name(),
                pmu_count: r.pmu_count,
                samples: r.samples,
                t: r.t,
                quantity: r.quantity.name(),
                armse_empirical: r.empirical,
                armse_theoretical: r.theoretical,
                n_runs: self.runs,
                seed: self.seed,
            })
            .map_err(|e| AnalysisError::Output(e.to_string()))?;
        }
        w.flush()
            .map_err(|e| AnalysisError::Output(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Records of one curve, ordered by `t`.
    pub fn curve(
        &self,
        algorithm: Algorithm,
        pmu_count: usize,
        samples: usize,
        quantity: Quantity,
    ) -> Vec<&ArmseRecord> {
        self.records
            .iter()
            .filter(|r| {
                r.algorithm == algorithm
                    && r.pmu_count == pmu_count
                    && r.samples == samples
                    && r.quantity == quantity
            })
            .collect()
    }

    /// Value after the last frame of the interval (`t = M − 1`).
    pub fn final_value(
        &self,
        algorithm: Algorithm,
        pmu_count: usize,
        samples: usize,
        quantity: Quantity,
    ) -> Option<&ArmseRecord> {
        self.curve(algorithm, pmu_count, samples, quantity)
            .into_iter()
            .find(|r| r.t + 1 == samples)
    }

    /// Index of a record in `records`.
    pub fn record_index(
        &self,
        algorithm: Algorithm,
        pmu_count: usize,
        samples: usize,
        t: usize,
        quantity: Quantity,
    ) -> Option<usize> {
        self.records.iter().position(|r| {
            r.algorithm == algorithm
                && r.pmu_count == pmu_count
                && r.samples == samples
                && r.t == t
                && r.quantity == quantity
        })
    }

    /// Ordinary least-squares slope of `empirical` against `x` over the given
    /// `(x, record index)` points. The standard error uses the per-run errors
    /// (delta method), so it accounts for the runs being shared between
    /// points.
    pub fn slope_test(&self, points: &[(f64, usize)]) -> Result<SlopeTest, AnalysisError> {
        let runs = self.run_errors.as_ref().ok_or_else(|| {
            AnalysisError::Config("slope test needs per-run errors (keep_runs)".into())
        })?;
        if points.len() < 2 || runs.len() < 2 {
            return Err(AnalysisError::Config(
                "slope test needs ≥ 2 points and runs".into(),
            ));
        }
        let k = points.len() as f64;
        let x_mean = points.iter().map(|p| p.0).sum::<f64>() / k;
        let sxx: f64 = points.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
        let coef: Vec<f64> = points.iter().map(|p| (p.0 - x_mean) / sxx).collect();
        let y: Vec<f64> = points.iter().map(|p| self.records[p.1].empirical).collect();
        let slope = coef.iter().zip(&y).map(|(c, y)| c * y).sum();
        let n = runs.len() as f64;
        let means: Vec<f64> = y.iter().map(|v| v * v).collect();
        let mut acc = 0.0;
        for run in runs {
            let psi: f64 = points
                .iter()
                .enumerate()
                .filter(|(j, _)| y[*j] > 0.0)
                .map(|(j, p)| coef[j] * (run[p.1] - means[j]) / (2.0 * y[j]))
                .sum();
            acc += psi * psi;
        }
        Ok(SlopeTest {
            slope,
            std_error: (acc / (n - 1.0) / n).sqrt(),
        })
    }

    pub fn summary(&self) -> ExperimentSummary {
        let final_values = self
            .records
            .iter()
            .filter(|r| r.t + 1 == r.samples)
            .map(|r| SummaryEntry {
                algorithm: r.algorithm,
                pmu_count: r.pmu_count,
                samples: r.samples,
                quantity: r.quantity,
                armse_empirical: r.empirical,
                armse_theoretical: r.theoretical,
                improvement_vs_prior: (r.quantity == Quantity::Voltage
                    && self.prior_voltage_armse > 0.0)
                    .then(|| 1.0 - r.empirical / self.prior_voltage_armse),
            })
            .collect();
        ExperimentSummary {
            scenario_id: self.scenario_id.clone(),
            seed: self.seed,
            n_runs: self.runs,
            resampled_runs: self.resampled,
            prior_voltage_armse: self.prior_voltage_armse,
            final_values,
        }
    }
}

/// Filter configuration for one `(PMU count, M)` pair.
struct Setup {
    pmu_count: usize,
    samples: usize,
    cfg: MeasurementConfig,
    /// Positions of the measured buses among the load buses.
    columns: Vec<usize>,
    sase: Option<(StateSpaceModel, GainSchedule)>,
    blind: Option<(StateSpaceModel, GainSchedule)>,
    /// `(algorithm, quantity)` pairs in output order, with theoretical
    /// ARMSE per `t`.
    outputs: Vec<(Algorithm, Quantity, Vec<f64>)>,
}

fn filter_config(model: &LinearModel, cfg: &MeasurementConfig) -> MeasurementConfig {
    let state = &model.point().state;
    let loads = model.load_buses();
    let p: Vec<f64> = loads.iter().map(|&h| state.p[h]).collect();
    let q: Vec<f64> = loads.iter().map(|&h| state.q[h]).collect();
    let prior_u = voltage_covariance(model, &demand_prior(&p, &q, cfg));
    let scale = prior_u.diagonal().max().max(PRIOR_JITTER);
    let floor = (NOISE_FLOOR * scale).sqrt();
    MeasurementConfig {
        sigma_pmu_v: cfg.sigma_pmu_v.max(floor),
        sigma_pmu_theta: cfg.sigma_pmu_theta.max(floor),
        ..cfg.clone()
    }
}

fn voltage_quantities(model: &LinearModel, demand: &DMatrix<f64>) -> [(Quantity, f64); 3] {
    let nl = model.n_loads();
    let sigma_u = voltage_covariance(model, demand);
    let diag = sigma_u.diagonal();
    let v: f64 = diag.rows(0, nl).sum();
    let th: f64 = diag.rows(nl, nl).sum();
    [
        (
            Quantity::Voltage,
            ((v + th) / (2 * nl) as f64).max(0.0).sqrt(),
        ),
        (Quantity::VMag, (v / nl as f64).max(0.0).sqrt()),
        (Quantity::VAngle, (th / nl as f64).max(0.0).sqrt()),
    ]
}

fn theoretical(
    model: &LinearModel,
    ssm: &StateSpaceModel,
    covariances: &[DMatrix<f64>],
    quantities: &[Quantity],
) -> Vec<Vec<f64>> {
    let m = ssm.m();
    let mut out = vec![Vec::with_capacity(covariances.len() - 1); quantities.len()];
    for sigma in &covariances[1..] {
        let volt = voltage_quantities(model, &ssm.demand_block(sigma));
        for (slot, q) in out.iter_mut().zip(quantities) {
            let value = match q {
                Quantity::Alpha | Quantity::Beta => {
                    let off = if *q == Quantity::Alpha {
                        ssm.alpha_offset()
                    } else {
                        ssm.beta_offset()
                    };
                    ((0..m).map(|i| sigma[(off + i, off + i)]).sum::<f64>() / m as f64).sqrt()
                }
                _ => {
                    volt.iter()
                        .find(|(k, _)| k == q)
                        .expect("voltage quantity")
                        .1
                }
            };
            slot.push(value);
        }
    }
    out
}

fn build_setup(
    model: &LinearModel,
    scenario: &Scenario,
    pmu_count: usize,
    samples: usize,
) -> Result<Setup, AnalysisError> {
    let cfg = MeasurementConfig {
        samples,
        ..scenario.config.clone()
    };
    cfg.validate()?;
    let fcfg = filter_config(model, &cfg);
    let placement = scenario.placement.prefix(pmu_count);
    let columns = placement
        .measured()
        .iter()
        .map(|&h| {
            model
                .load_position(h)
                .expect("placement excludes the slack")
        })
        .collect();
    let wants = |a| scenario.algorithms.contains(&a);

    let mut outputs = Vec::new();
    let sase = if wants(Algorithm::Sase) {
        let ssm = build_state_space(
            model,
            &placement,
            &fcfg,
            Variant::SyncAware,
            ResyncMode::Reset,
        )?;
        let sched = offline_schedule(&ssm)?;
        let qs = Quantity::for_algorithm(Algorithm::Sase, pmu_count);
        for (q, curve) in qs
            .iter()
            .zip(theoretical(model, &ssm, &sched.covariances, qs))
        {
            outputs.push((Algorithm::Sase, *q, curve));
        }
        Some((ssm, sched))
    } else {
        None
    };
    let blind = if wants(Algorithm::Gt) || wants(Algorithm::Blse) {
        let ssm = build_state_space(model, &placement, &fcfg, Variant::Blind, ResyncMode::Reset)?;
        let sched = offline_schedule(&ssm)?;
        let qs = Quantity::for_algorithm(Algorithm::Gt, pmu_count);
        if wants(Algorithm::Gt) {
            for (q, curve) in qs
                .iter()
                .zip(theoretical(model, &ssm, &sched.covariances, qs))
            {
                outputs.push((Algorithm::Gt, *q, curve));
            }
        }
        if wants(Algorithm::Blse) {
            let true_cov = mismatched_riccati(&ssm, &sched, cfg.sigma_alpha, cfg.sigma_beta);
            for (q, curve) in qs.iter().zip(theoretical(model, &ssm, &true_cov, qs)) {
                outputs.push((Algorithm::Blse, *q, curve));
            }
        }
        Some((ssm, sched))
    } else {
        None
    };
    outputs.sort_by_key(|(a, _, _)| *a);
    Ok(Setup {
        pmu_count,
        samples,
        cfg,
        columns,
        sase,
        blind,
        outputs,
    })
}

/// Per-run squared errors, laid out like the concatenated `outputs` of all
/// setups, `t`-major within each output.
fn simulate_run(
    i: usize,
    scenario: &Scenario,
    model: &LinearModel,
    setups: &[Setup],
) -> Result<(Vec<f64>, u32), AnalysisError> {
    let net = &scenario.network;
    let cfg = &scenario.config;
    let seed = scenario.seed;
    let nominal = &model.point().state;
    let loads = model.load_buses();
    let nl = loads.len();
    let run = i as u64;

    let mut attempt = 0;
    let truth = loop {
        let mut rng = stream(seed, run, Purpose::Demand, attempt);
        let (p, q) = draw_demand_truth(&nominal.p, &nominal.q, loads, cfg, &mut rng);
        let opts = PowerFlowOptions {
            initial: Some(nominal.clone()),
            ..PowerFlowOptions::default()
        };
        match solve_power_flow(net, &p, &q, &opts) {
            Ok(op) => break op.state,
            Err(e) if attempt + 1 < MAX_ATTEMPTS => {
                warn!(
                    "run {i}: demand draw {attempt} has no power-flow solution ({e}); resampling"
                );
                attempt += 1;
            }
            Err(e) => return Err(e.into()),
        }
    };

    let clocks = draw_clock(cfg, nl, &mut stream(seed, run, Purpose::Clock, 0));
    let all = Placement::new(loads.to_vec(), net.n(), net.slack_index())?;
    let v_nom: Vec<f64> = loads.iter().map(|&h| nominal.v[h]).collect();

    let mut out = Vec::new();
    let mut frames_for: Option<(usize, Vec<PmuFrame>)> = None;
    for setup in setups {
        if frames_for.as_ref().is_none_or(|(m, _)| *m != setup.samples) {
            let mut rng = stream(seed, run, Purpose::PmuNoise, 0);
            let frames =
                simulate_pmu_stream(&truth, &all, &clocks, &v_nom, &setup.cfg, 0, &mut rng);
            frames_for = Some((setup.samples, frames));
        }
        let frames = subset(&frames_for.as_ref().expect("frames").1, &setup.columns);
        let sub_clocks: Vec<ClockError> = setup.columns.iter().map(|&c| clocks[c]).collect();
        let mut errors = |alg: Algorithm, traj: &Trajectory| {
            run_errors(alg, traj, setup, model, &truth, &sub_clocks, &mut out);
        };
        if let Some((ssm, sched)) = &setup.sase {
            errors(Algorithm::Sase, &run_frames(ssm, sched, &frames)?);
        }
        if let Some((ssm, sched)) = &setup.blind {
            if scenario.algorithms.contains(&Algorithm::Gt) {
                errors(Algorithm::Gt, &gt_run(&frames, &sub_clocks, ssm, sched)?);
            }
            if scenario.algorithms.contains(&Algorithm::Blse) {
                errors(Algorithm::Blse, &blse_run(&frames, ssm, sched)?);
            }
        }
    }
    Ok((out, attempt))
}

fn subset(frames: &[PmuFrame], columns: &[usize]) -> Vec<PmuFrame> {
    frames
        .iter()
        .map(|f| PmuFrame {
            k: f.k,
            t: f.t,
            v_meas: columns.iter().map(|&c| f.v_meas[c]).collect(),
            theta_meas: columns.iter().map(|&c| f.theta_meas[c]).collect(),
        })
        .collect()
}

fn run_errors(
    alg: Algorithm,
    traj: &Trajectory,
    setup: &Setup,
    model: &LinearModel,
    truth: &GridState,
    clocks: &[ClockError],
    out: &mut Vec<f64>,
) {
    let nominal = &model.point().state;
    let loads = model.load_buses();
    let nl = loads.len();
    let m = clocks.len();
    let s_u = model.sensitivity();
    // Per t: (voltage, v_mag, v_angle, alpha, beta) mean squared errors.
    let per_t: Vec<[f64; 5]> = traj
        .states
        .iter()
        .map(|fs| {
            let delta = s_u * fs.x_hat.rows(0, 2 * nl);
            let mut ev = 0.0;
            let mut eth = 0.0;
            for (i, &h) in loads.iter().enumerate() {
                ev += (nominal.v[h] + delta[i] - truth.v[h]).powi(2);
                eth += (nominal.theta[h] + delta[i + nl] - truth.theta[h]).powi(2);
            }
            let (mut ea, mut eb) = (0.0, 0.0);
            if fs.x_hat.len() > 2 * nl {
                let x: &DVector<f64> = &fs.x_hat;
                for (j, c) in clocks.iter().enumerate() {
                    ea += (x[2 * nl + j] - c.alpha).powi(2);
                    eb += (x[2 * nl + m + j] - c.beta).powi(2);
                }
            }
            let mf = m.max(1) as f64;
            [
                (ev + eth) / (2 * nl) as f64,
                ev / nl as f64,
                eth / nl as f64,
                ea / mf,
                eb / mf,
            ]
        })
        .collect();
    for (_, q, _) in setup.outputs.iter().filter(|(a, _, _)| *a == alg) {
        let k = match q {
            Quantity::Voltage => 0,
            Quantity::VMag => 1,
            Quantity::VAngle => 2,
            Quantity::Alpha => 3,
            Quantity::Beta => 4,
        };
        out.extend(per_t.iter().map(|e| e[k]));
    }
}

/// Runs `scenario` on the current rayon pool.
pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentResult, AnalysisError> {
    let net = &scenario.network;
    scenario.config.validate()?;
    if scenario.runs == 0 {
        return Err(AnalysisError::Config("N must be ≥ 1".into()));
    }
    if scenario.algorithms.is_empty() {
        return Err(AnalysisError::Config("no algorithm selected".into()));
    }
    let (p_nom, q_nom) = net.nominal_injections();
    let op: OperatingPoint = solve_power_flow(net, &p_nom, &q_nom, &PowerFlowOptions::default())?;
    let model = tangent_matrix(net, &op)?;
    for &k in &scenario.pmu_counts {
        if k > scenario.placement.len() {
            return Err(AnalysisError::Config(format!(
                "PMU count {k} exceeds the {} placed PMUs",
                scenario.placement.len()
            )));
        }
    }
    let samples = if scenario.samples.is_empty() {
        vec![scenario.config.samples]
    } else {
        scenario.samples.clone()
    };
    let mut setups = Vec::new();
    for &m in &samples {
        for &k in &scenario.pmu_counts {
            setups.push(build_setup(&model, scenario, k, m)?);
        }
    }

    let prior = scenario.config.clone();
    let fprior = filter_config(&model, &prior);
    let ssm0 = build_state_space(
        &model,
        &Placement::default(),
        &fprior,
        Variant::Blind,
        ResyncMode::Reset,
    )?;
    let prior_voltage_armse = voltage_quantities(&model, ssm0.sigma0())[0].1;

    info!(
        "experiment {}: {} runs, {} setups",
        scenario.id,
        scenario.runs,
        setups.len()
    );
    let per_run: Vec<(Vec<f64>, u32)> = (0..scenario.runs)
        .into_par_iter()
        .map(|i| simulate_run(i, scenario, &model, &setups))
        .collect::<Result<_, _>>()?;

    let resampled = per_run.iter().filter(|(_, a)| *a > 0).count();
    if resampled as f64 > 0.01 * scenario.runs as f64 {
        return Err(AnalysisError::TooManyResamples {
            resampled,
            runs: scenario.runs,
        });
    }
    if resampled > 0 {
        warn!("{resampled} of {} runs were resampled", scenario.runs);
    }

    let len = per_run[0].0.len();
    let mut totals = vec![0.0; len];
    let mut squares = vec![0.0; len];
    for (errs, _) in &per_run {
        for ((t, s), e) in totals.iter_mut().zip(squares.iter_mut()).zip(errs) {
            *t += e;
            *s += e * e;
        }
    }
    let n = scenario.runs as f64;
    let std_error = |idx: usize, armse: f64| {
        if scenario.runs < 2 || armse == 0.0 {
            return 0.0;
        }
        let mean = totals[idx] / n;
        let var = ((squares[idx] / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt() / (2.0 * armse)
    };
    let mut records = Vec::with_capacity(len);
    let mut idx = 0;
    for setup in &setups {
        for (alg, q, theory) in &setup.outputs {
            for (t, th) in theory.iter().enumerate() {
                let empirical = (totals[idx] / n).sqrt();
                records.push(ArmseRecord {
                    algorithm: *alg,
                    pmu_count: setup.pmu_count,
                    samples: setup.samples,
                    t,
                    quantity: *q,
                    empirical,
                    theoretical: *th,
                    std_error: std_error(idx, empirical),
                });
                idx += 1;
            }
        }
    }
    debug_assert_eq!(idx, len);
    Ok(ExperimentResult {
        scenario_id: scenario.id.clone(),
        seed: scenario.seed,
        runs: scenario.runs,
        resampled,
        prior_voltage_armse,
        records,
        run_errors: scenario
            .keep_runs
            .then(|| per_run.into_iter().map(|(e, _)| e).collect()),
    })
}

/// Runs `scenario` on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(
    scenario: &Scenario,
    threads: usize,
) -> Result<ExperimentResult, AnalysisError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| AnalysisError::Config(e.to_string()))?;
    pool.install(|| run_experiment(scenario))
}
