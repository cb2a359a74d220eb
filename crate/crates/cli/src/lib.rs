//! `sase` command-line front end.
//!
//! Every subcommand reads a network (JSON, or a MATPOWER case when the path
//! ends in `.m`) and writes CSV/JSON artifacts to `--out` (or stdout for the
//! small reports). Exit codes: 0 success, 1 numerical failure, 2 input
//! error.

mod error;
mod scenario;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::DMatrix;
use serde::Serialize;

use sase_core::analysis::{
    greedy_placement, placement_score, run_experiment, run_experiment_with_threads,
    theta_beta_correlation, two_node_limits, two_node_posterior, Algorithm, Scenario,
    TwoNodeParams,
};
use sase_core::estimator::{
    blse_run, build_state_space, compensate_frames, offline_schedule, recover_voltages, run_frames,
    ResyncMode, StateSpaceModel, Trajectory, Variant,
};
use sase_core::measure::{
    draw_clock, draw_demand_truth, read_stream_csv, simulate_pmu_stream, write_stream_csv,
};
use sase_core::powerflow::PowerFlowOptions;
use sase_core::rng::{stream, Purpose};
use sase_core::{
    import_matpower_case, parse_network, solve_power_flow, tangent_matrix, ClockError, GridState,
    LinearModel, MeasurementConfig, Network, Placement, PmuFrame,
};

pub use error::CliError;
pub use scenario::ScenarioFile;

/// Demand redraws allowed when a simulated demand has no power-flow solution.
const MAX_DEMAND_ATTEMPTS: u32 = 20;

#[derive(Debug, Parser)]
#[command(
    name = "sase",
    version,
    about = "Synchronization-aware PMU state estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the AC power flow and print the operating point as JSON.
    Powerflow(PowerflowArgs),
    /// Write the tangent matrix A_u and the sensitivity S_u as CSV.
    Linearize(LinearizeArgs),
    /// Simulate a de-synchronized PMU stream.
    Simulate(SimulateArgs),
    /// Run estimators on a simulated or supplied stream.
    Estimate(EstimateArgs),
    /// Monte-Carlo ARMSE sweep over PMU count and M.
    Experiment(ExperimentArgs),
    /// Greedy PMU placement.
    Placement(PlacementArgs),
    /// Two-node posterior table versus M.
    Twonode(TwonodeArgs),
}

#[derive(Debug, Args)]
pub struct NetworkArg {
    #[arg(long)]
    pub network: PathBuf,
}

#[derive(Debug, Args)]
pub struct PowerflowArgs {
    #[command(flatten)]
    pub net: NetworkArg,
    /// JSON `{"p": [...], "q": [...]}` with one entry per bus; nominal
    /// demands otherwise.
    #[arg(long)]
    pub injections: Option<PathBuf>,
    /// Write `operating_point.json` here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    #[command(flatten)]
    pub net: NetworkArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PlacementOpts {
    /// 1-based bus ids in placement order.
    #[arg(long, value_delimiter = ',', conflicts_with = "pmu_count")]
    pub pmus: Option<Vec<usize>>,
    /// Number of PMUs (greedy placement unless --pmus or the scenario
    /// gives an order); a list sweeps counts in `experiment`.
    #[arg(long = "pmu-count", value_delimiter = ',')]
    pub pmu_count: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub net: NetworkArg,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub placement: PlacementOpts,
    #[arg(long = "M")]
    pub samples: Option<usize>,
    /// Resync intervals to simulate.
    #[arg(long)]
    pub intervals: Option<usize>,
    #[arg(long)]
    pub mode: Option<ResyncMode>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub net: NetworkArg,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Required unless --stream is given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stream CSV `k,t,bus,v_meas,theta_meas` replacing the simulation.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "sase")]
    pub algo: Vec<Algorithm>,
    #[command(flatten)]
    pub placement: PlacementOpts,
    #[arg(long = "M")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub intervals: Option<usize>,
    #[arg(long)]
    pub mode: Option<ResyncMode>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub net: NetworkArg,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',')]
    pub algo: Option<Vec<Algorithm>>,
    #[command(flatten)]
    pub placement: PlacementOpts,
    /// Values of M to sweep.
    #[arg(long = "M", value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    /// Monte-Carlo runs.
    #[arg(long = "N")]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlacementArgs {
    #[command(flatten)]
    pub net: NetworkArg,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// PMUs to place; all load buses by default.
    #[arg(long = "pmu-count")]
    pub pmu_count: Option<usize>,
    #[arg(long = "M")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TwonodeArgs {
    #[arg(long = "M", value_delimiter = ',', default_values_t = [20usize, 25, 30, 50, 60, 1_000, 10_000, 100_000])]
    pub samples: Vec<usize>,
    #[arg(long = "T", value_delimiter = ',', default_values_t = [1.0f64])]
    pub period: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_theta: f64,
    #[arg(long, default_value_t = 2e-4)]
    pub sigma_beta: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub sigma_alpha: f64,
    /// PMU angle noise std.
    #[arg(long, default_value_t = 1e-3)]
    pub sigma_r: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Powerflow(a) => cmd_powerflow(&a),
        Command::Linearize(a) => cmd_linearize(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Placement(a) => cmd_placement(&a),
        Command::Twonode(a) => cmd_twonode(&a),
    }
}

pub fn load_network(path: &Path) -> Result<Network, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let net = if path.extension().is_some_and(|e| e == "m") {
        import_matpower_case(&text)
    } else {
        parse_network(&text)
    };
    net.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn nominal_model(net: &Network) -> Result<LinearModel, CliError> {
    let (p, q) = net.nominal_injections();
    let op = solve_power_flow(net, &p, &q, &PowerFlowOptions::default())?;
    Ok(tangent_matrix(net, &op)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(BufWriter::new(file))
}

fn output(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(dir) => Box::new(create(dir, name)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Input(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(format!("writing CSV: {e}"))
}

#[derive(Serialize)]
struct OperatingPointJson<'a> {
    bus: Vec<usize>,
    v: &'a [f64],
    theta: &'a [f64],
    p: &'a [f64],
    q: &'a [f64],
    residual: f64,
    iterations: usize,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Injections {
    p: Vec<f64>,
    q: Vec<f64>,
}

fn cmd_powerflow(a: &PowerflowArgs) -> Result<(), CliError> {
    let net = load_network(&a.net.network)?;
    let (p, q) = match &a.injections {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let inj: Injections = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            (inj.p, inj.q)
        }
        None => net.nominal_injections(),
    };
    let op = solve_power_flow(&net, &p, &q, &PowerFlowOptions::default())?;
    let s = &op.state;
    let doc = OperatingPointJson {
        bus: (1..=net.n()).collect(),
        v: &s.v,
        theta: &s.theta,
        p: &s.p,
        q: &s.q,
        residual: op.residual_norm,
        iterations: op.iterations,
    };
    write_json(
        &mut *output(a.out.as_deref(), "operating_point.json")?,
        &doc,
    )
}

fn write_matrix<W: Write>(
    out: W,
    m: &DMatrix<f64>,
    rows: &[String],
    cols: &[String],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(cols.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, label) in rows.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(i).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}

fn labels(prefix: &str, ids: impl Iterator<Item = usize>) -> Vec<String> {
    ids.map(|h| format!("{prefix}{}", h + 1)).collect()
}

fn cmd_linearize(a: &LinearizeArgs) -> Result<(), CliError> {
    let net = load_network(&a.net.network)?;
    let model = nominal_model(&net)?;
    let n = net.n();
    let full: Vec<String> = labels("v", 0..n)
        .into_iter()
        .chain(labels("theta", 0..n))
        .collect();
    let rows: Vec<String> = labels("p", 0..n)
        .into_iter()
        .chain(labels("q", 0..n))
        .collect();
    write_matrix(create(&a.out, "a_u.csv")?, model.a_u(), &rows, &full)?;
    let loads = model.load_buses();
    let s_rows: Vec<String> = labels("v", loads.iter().copied())
        .into_iter()
        .chain(labels("theta", loads.iter().copied()))
        .collect();
    let s_cols: Vec<String> = labels("p", loads.iter().copied())
        .into_iter()
        .chain(labels("q", loads.iter().copied()))
        .collect();
    write_matrix(
        create(&a.out, "s_u.csv")?,
        model.sensitivity(),
        &s_rows,
        &s_cols,
    )?;
    info!("condition number of reduced A_u: {:e}", model.condition());
    Ok(())
}

/// Resolves the PMU order: explicit ids, then the scenario, then greedy.
fn resolve_placement(
    model: &LinearModel,
    cfg: &MeasurementConfig,
    opts: &PlacementOpts,
    scenario: &ScenarioFile,
    count: Option<usize>,
) -> Result<Placement, CliError> {
    let n = model.n();
    let slack = model.slack_index();
    if let Some(ids) = opts.pmus.as_ref().or(scenario.pmus.as_ref()) {
        let p = Placement::from_ids(ids, n, slack)?;
        return Ok(match count {
            Some(k) if k > p.len() => {
                return Err(CliError::Input(format!(
                    "--pmu-count {k} exceeds the {} listed PMUs",
                    p.len()
                )))
            }
            Some(k) => p.prefix(k),
            None => p,
        });
    }
    let k = count.unwrap_or(model.n_loads());
    Ok(greedy_placement(model, cfg, k)?)
}

fn single_count(opts: &PlacementOpts) -> Result<Option<usize>, CliError> {
    match opts.pmu_count.as_deref() {
        None => Ok(None),
        Some([k]) => Ok(Some(*k)),
        Some(_) => Err(CliError::Input(
            "--pmu-count takes a single value here".into(),
        )),
    }
}

/// A simulated multi-interval stream with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedStream {
    pub truth: GridState,
    /// Clock errors per interval, aligned with `placement.measured()`.
    pub clocks: Vec<Vec<ClockError>>,
    pub frames: Vec<PmuFrame>,
}

/// Draws one demand realization (held for the whole stream), the clocks
/// and the PMU noise from independent seeded streams. In reset mode every
/// interval gets fresh clocks; in integrate mode the skew persists and the
/// offset advances by `αT` per interval.
pub fn simulate_stream(
    net: &Network,
    model: &LinearModel,
    placement: &Placement,
    cfg: &MeasurementConfig,
    intervals: usize,
    mode: ResyncMode,
    seed: u64,
) -> Result<SimulatedStream, CliError> {
    let nominal = &model.point().state;
    let mut attempt = 0;
    let truth = loop {
        let mut rng = stream(seed, 0, Purpose::Demand, attempt);
        let (p, q) = draw_demand_truth(&nominal.p, &nominal.q, model.load_buses(), cfg, &mut rng);
        let opts = PowerFlowOptions {
            initial: Some(nominal.clone()),
            ..PowerFlowOptions::default()
        };
        match solve_power_flow(net, &p, &q, &opts) {
            Ok(op) => break op.state,
            Err(_) if attempt + 1 < MAX_DEMAND_ATTEMPTS => attempt += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let measured = placement.measured();
    let m = measured.len();
    let mut clock_rng = stream(seed, 0, Purpose::Clock, 0);
    let mut clocks: Vec<Vec<ClockError>> = Vec::with_capacity(intervals);
    for k in 0..intervals {
        let next = match (mode, clocks.last()) {
            (ResyncMode::Integrate, Some(prev)) if k > 0 => prev
                .iter()
                .map(|c| ClockError {
                    alpha: c.alpha,
                    beta: c.beta + c.alpha * cfg.period,
                })
                .collect(),
            _ => draw_clock(cfg, m, &mut clock_rng),
        };
        clocks.push(next);
    }
    let v_nom: Vec<f64> = measured.iter().map(|&h| nominal.v[h]).collect();
    let mut noise = stream(seed, 0, Purpose::PmuNoise, 0);
    let mut frames = Vec::with_capacity(intervals * cfg.samples);
    for (k, c) in clocks.iter().enumerate() {
        frames.extend(simulate_pmu_stream(
            &truth, placement, c, &v_nom, cfg, k, &mut noise,
        ));
    }
    Ok(SimulatedStream {
        truth,
        clocks,
        frames,
    })
}

#[derive(Serialize)]
struct ClockRow {
    k: usize,
    bus: usize,
    alpha: f64,
    beta: f64,
}

#[derive(Serialize)]
struct TruthJson<'a> {
    bus: Vec<usize>,
    v: &'a [f64],
    theta: &'a [f64],
    p: &'a [f64],
    q: &'a [f64],
    clocks: Vec<ClockRow>,
}

fn truth_json<'a>(sim: &'a SimulatedStream, measured: &[usize]) -> TruthJson<'a> {
    let clocks = sim
        .clocks
        .iter()
        .enumerate()
        .flat_map(|(k, cs)| {
            measured.iter().zip(cs).map(move |(&h, c)| ClockRow {
                k,
                bus: h + 1,
                alpha: c.alpha,
                beta: c.beta,
            })
        })
        .collect();
    TruthJson {
        bus: (1..=sim.truth.n()).collect(),
        v: &sim.truth.v,
        theta: &sim.truth.theta,
        p: &sim.truth.p,
        q: &sim.truth.q,
        clocks,
    }
}

struct StreamSetup {
    net: Network,
    model: LinearModel,
    cfg: MeasurementConfig,
    placement: Placement,
    intervals: usize,
    mode: ResyncMode,
}

fn stream_setup(
    network: &Path,
    scenario: Option<&Path>,
    placement: &PlacementOpts,
    samples: Option<usize>,
    intervals: Option<usize>,
    mode: Option<ResyncMode>,
) -> Result<StreamSetup, CliError> {
    let sc = ScenarioFile::load(scenario)?;
    let net = load_network(network)?;
    let mut cfg = sc.measurement.clone();
    if let Some(m) = samples {
        cfg.samples = m;
    }
    cfg.validate()?;
    let model = nominal_model(&net)?;
    let placement = resolve_placement(&model, &cfg, placement, &sc, single_count(placement)?)?;
    let intervals = intervals.unwrap_or(sc.intervals);
    if intervals == 0 {
        return Err(CliError::Input("--intervals must be ≥ 1".into()));
    }
    Ok(StreamSetup {
        net,
        model,
        cfg,
        placement,
        intervals,
        mode: mode.unwrap_or(sc.mode),
    })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let s = stream_setup(
        &a.net.network,
        a.scenario.as_deref(),
        &a.placement,
        a.samples,
        a.intervals,
        a.mode,
    )?;
    let sim = simulate_stream(
        &s.net,
        &s.model,
        &s.placement,
        &s.cfg,
        s.intervals,
        s.mode,
        a.seed,
    )?;
    let measured = s.placement.measured();
    write_stream_csv(&sim.frames, &measured, create(&a.out, "stream.csv")?)?;
    write_json(
        &mut create(&a.out, "truth.json")?,
        &truth_json(&sim, &measured),
    )?;
    info!(
        "{} frames at buses {:?}",
        sim.frames.len(),
        measured.iter().map(|h| h + 1).collect::<Vec<_>>()
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateRow {
    algorithm: &'static str,
    k: usize,
    t: usize,
    bus: usize,
    v_hat: f64,
    theta_hat: f64,
    alpha_hat: Option<f64>,
    beta_hat: Option<f64>,
}

#[derive(Serialize)]
struct EstimateSummary {
    algorithm: Algorithm,
    frames: usize,
    /// `sqrt(tr Σ^u / 2n_L)` from the filter's own covariance after the last
    /// frame. For BLSE this understates the actual error.
    armse_filter: f64,
    /// Error against the simulated truth after the last frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    armse_truth: Option<f64>,
}

fn run_algorithm(
    alg: Algorithm,
    s: &StreamSetup,
    frames: &[PmuFrame],
    clocks: Option<&[Vec<ClockError>]>,
) -> Result<(Trajectory, StateSpaceModel), CliError> {
    let variant = match alg {
        Algorithm::Sase => Variant::SyncAware,
        Algorithm::Gt | Algorithm::Blse => Variant::Blind,
    };
    let ssm = build_state_space(&s.model, &s.placement, &s.cfg, variant, s.mode)?;
    let schedule = offline_schedule(&ssm)?;
    let traj = match alg {
        Algorithm::Sase => run_frames(&ssm, &schedule, frames)?,
        Algorithm::Blse => blse_run(frames, &ssm, &schedule)?,
        Algorithm::Gt => {
            let clocks = clocks.ok_or_else(|| {
                CliError::Input(
                    "gt needs the true clocks and runs only on simulated streams".into(),
                )
            })?;
            let clean: Vec<PmuFrame> = frames
                .chunks(s.cfg.samples)
                .zip(clocks)
                .flat_map(|(chunk, c)| compensate_frames(chunk, c, ssm.spacing()))
                .collect();
            run_frames(&ssm, &schedule, &clean)?
        }
    };
    Ok((traj, ssm))
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let s = stream_setup(
        &a.net.network,
        a.scenario.as_deref(),
        &a.placement,
        a.samples,
        a.intervals,
        a.mode,
    )?;
    let measured = s.placement.measured();
    let (frames, sim) = match (&a.stream, a.seed) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            let frames = read_stream_csv(file, &measured, s.cfg.samples)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            (frames, None)
        }
        (None, Some(seed)) => {
            let sim = simulate_stream(
                &s.net,
                &s.model,
                &s.placement,
                &s.cfg,
                s.intervals,
                s.mode,
                seed,
            )?;
            (sim.frames.clone(), Some(sim))
        }
        (None, None) => {
            return Err(CliError::Input(
                "--seed is required when no --stream is given".into(),
            ))
        }
    };
    if frames.is_empty() {
        return Err(CliError::Input("the stream has no frames".into()));
    }

    let mut algos: Vec<Algorithm> = Vec::new();
    for alg in &a.algo {
        if !algos.contains(alg) {
            algos.push(*alg);
        }
    }
    let loads = s.model.load_buses();
    let nl = loads.len();
    let mut w = csv::Writer::from_writer(create(&a.out, "estimates.csv")?);
    let mut summary = Vec::new();
    for alg in algos {
        let (traj, ssm) =
            run_algorithm(alg, &s, &frames, sim.as_ref().map(|x| x.clocks.as_slice()))?;
        for (i, fs) in traj.states.iter().enumerate() {
            let est = recover_voltages(&fs.x_hat, traj.covariance(i), &s.model);
            for &h in loads {
                let clock = if ssm.has_desync_states() {
                    measured.iter().position(|&b| b == h).map(|j| {
                        (
                            fs.x_hat[ssm.alpha_offset() + j],
                            fs.x_hat[ssm.beta_offset() + j],
                        )
                    })
                } else {
                    None
                };
                w.serialize(EstimateRow {
                    algorithm: alg.name(),
                    k: fs.k,
                    t: fs.t - 1,
                    bus: h + 1,
                    v_hat: est.v_hat[h],
                    theta_hat: est.theta_hat[h],
                    alpha_hat: clock.map(|c| c.0),
                    beta_hat: clock.map(|c| c.1),
                })
                .map_err(csv_err)?;
            }
        }
        let last = traj.states.len() - 1;
        let est = recover_voltages(&traj.states[last].x_hat, traj.covariance(last), &s.model);
        let armse_truth = sim.as_ref().map(|sim| {
            let sq: f64 = loads
                .iter()
                .map(|&h| {
                    (est.v_hat[h] - sim.truth.v[h]).powi(2)
                        + (est.theta_hat[h] - sim.truth.theta[h]).powi(2)
                })
                .sum();
            (sq / (2 * nl) as f64).sqrt()
        });
        summary.push(EstimateSummary {
            algorithm: alg,
            frames: traj.states.len(),
            armse_filter: (est.sigma_u.trace().max(0.0) / (2 * nl) as f64).sqrt(),
            armse_truth,
        });
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    write_json(&mut create(&a.out, "summary.json")?, &summary)
}

fn worker_limit() -> Result<Option<usize>, CliError> {
    match std::env::var("SASE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Input(format!(
                "SASE_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), CliError> {
    let sc = ScenarioFile::load(a.scenario.as_deref())?;
    let net = load_network(&a.net.network)?;
    let cfg = sc.measurement.clone();
    let model = nominal_model(&net)?;
    let placement = resolve_placement(&model, &cfg, &a.placement, &sc, None)?;
    let pmu_counts = match a.placement.pmu_count.clone().or(sc.pmu_counts.clone()) {
        Some(c) => c,
        None => (0..=placement.len()).collect(),
    };
    if let Some(&k) = pmu_counts.iter().find(|&&k| k > placement.len()) {
        return Err(CliError::Input(format!(
            "PMU count {k} exceeds the {} placed PMUs",
            placement.len()
        )));
    }
    let samples = a.samples.clone().or(sc.samples.clone()).unwrap_or_default();
    for &m in &samples {
        if m < 2 {
            return Err(CliError::Input(format!("M must be ≥ 2, got {m}")));
        }
    }
    let runs = a.runs.or(sc.runs).unwrap_or(100);
    if runs == 0 {
        return Err(CliError::Input("--N must be ≥ 1".into()));
    }
    let scenario = Scenario {
        id: sc.id.clone(),
        network: net,
        config: cfg,
        placement,
        pmu_counts,
        samples,
        algorithms: a
            .algo
            .clone()
            .or(sc.algorithms.clone())
            .unwrap_or_else(|| Algorithm::ALL.to_vec()),
        runs,
        seed: a.seed,
        keep_runs: false,
    };
    let result = match worker_limit()? {
        Some(n) => run_experiment_with_threads(&scenario, n)?,
        None => run_experiment(&scenario)?,
    };
    result.write_csv(create(&a.out, "experiment.csv")?)?;
    write_json(&mut create(&a.out, "summary.json")?, &result.summary())?;
    info!(
        "{} records from {} runs ({} resampled)",
        result.records.len(),
        result.runs,
        result.resampled
    );
    Ok(())
}

#[derive(Serialize)]
struct PlacementRow {
    step: usize,
    bus: usize,
    armse: f64,
}

fn cmd_placement(a: &PlacementArgs) -> Result<(), CliError> {
    let sc = ScenarioFile::load(a.scenario.as_deref())?;
    let net = load_network(&a.net.network)?;
    let mut cfg = sc.measurement.clone();
    if let Some(m) = a.samples {
        cfg.samples = m;
    }
    cfg.validate()?;
    let model = nominal_model(&net)?;
    let k = a.pmu_count.unwrap_or(model.n_loads());
    let placement = greedy_placement(&model, &cfg, k)?;
    let mut w = csv::Writer::from_writer(output(a.out.as_deref(), "placement.csv")?);
    for (i, &h) in placement.buses().iter().enumerate() {
        let armse = placement_score(&model, &cfg, &placement.prefix(i + 1))?;
        w.serialize(PlacementRow {
            step: i + 1,
            bus: h + 1,
            armse,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Serialize)]
struct TwonodeRow {
    #[serde(rename = "M")]
    samples: usize,
    #[serde(rename = "T")]
    period: f64,
    sigma11: f64,
    sigma22: f64,
    sigma33: f64,
    corr_theta_beta: f64,
    limit11: f64,
    sigma33_m_t2: f64,
}

fn cmd_twonode(a: &TwonodeArgs) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(output(a.out.as_deref(), "twonode.csv")?);
    for &period in &a.period {
        for &samples in &a.samples {
            let p = TwoNodeParams::new(
                a.sigma_theta,
                a.sigma_beta,
                a.sigma_alpha,
                a.sigma_r,
                period,
                samples,
            )?;
            let sigma = two_node_posterior(&p);
            w.serialize(TwonodeRow {
                samples,
                period,
                sigma11: sigma[(0, 0)],
                sigma22: sigma[(1, 1)],
                sigma33: sigma[(2, 2)],
                corr_theta_beta: theta_beta_correlation(&sigma),
                limit11: two_node_limits(&p).limit[(0, 0)],
                sigma33_m_t2: sigma[(2, 2)] * samples as f64 * period * period,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}
