//! Demand pseudo-measurements, PMU clock errors and PMU frame simulation.
//!
//! PMU angle readings carry a de-synchronization term that is affine within
//! each resync interval: `d(t) = β + α·T/(M−1)·t` for `t = 0..M−1`, with the
//! skew `α` in rad/s and the offset `β` in rad.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::powerflow::GridState;

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error("invalid measurement configuration: {0}")]
    Config(String),
    #[error("sample index {t} out of range 0..{samples}")]
    SampleIndex { t: usize, samples: usize },
    #[error("invalid placement: {0}")]
    Placement(String),
    #[error("stream line {line}: {message}")]
    Stream { line: u64, message: String },
    #[error("out-of-order frame at line {line}: expected (k={expected_k}, t={expected_t}), found (k={k}, t={t})")]
    OutOfOrder {
        line: u64,
        expected_k: usize,
        expected_t: usize,
        k: usize,
        t: usize,
    },
    #[error("cannot read scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Noise and de-synchronization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    /// Relative demand std.
    pub sigma_p: f64,
    pub sigma_q: f64,
    /// Correlation between active and reactive demand noise.
    pub eta: f64,
    /// Relative PMU magnitude std.
    pub sigma_pmu_v: f64,
    /// PMU angle std, rad.
    pub sigma_pmu_theta: f64,
    /// Clock skew std, rad/s.
    pub sigma_alpha: f64,
    /// Clock offset std, rad.
    pub sigma_beta: f64,
    /// Resync period, s.
    #[serde(rename = "T")]
    pub period: f64,
    /// Samples per resync interval.
    #[serde(rename = "M")]
    pub samples: usize,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            sigma_p: 0.5,
            sigma_q: 0.5,
            eta: 0.5,
            sigma_pmu_v: 1e-3,
            sigma_pmu_theta: 1e-3,
            sigma_alpha: 1e-2,
            sigma_beta: 2e-4,
            period: 1.0,
            samples: 30,
        }
    }
}

/// Reporting rates in samples per second at 50 and 60 Hz.
pub const STANDARD_SAMPLES: [usize; 5] = [20, 25, 30, 50, 60];

impl MeasurementConfig {
    pub fn validate(&self) -> Result<(), MeasureError> {
        let sigmas = [
            ("sigma_p", self.sigma_p),
            ("sigma_q", self.sigma_q),
            ("sigma_pmu_v", self.sigma_pmu_v),
            ("sigma_pmu_theta", self.sigma_pmu_theta),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
        ];
        for (name, value) in sigmas {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(MeasureError::Config(format!(
                    "{name} must be ≥ 0, got {value}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(MeasureError::Config(format!(
                "eta must be in [0, 1], got {}",
                self.eta
            )));
        }
        if self.samples < 2 {
            return Err(MeasureError::Config(format!(
                "M must be ≥ 2, got {}",
                self.samples
            )));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(MeasureError::Config(format!(
                "T must be > 0, got {}",
                self.period
            )));
        }
        Ok(())
    }

    /// Time between consecutive samples, `T/(M−1)`.
    pub fn sample_spacing(&self) -> f64 {
        self.period / (self.samples - 1) as f64
    }

    /// All noise sources disabled.
    pub fn noiseless(&self) -> Self {
        MeasurementConfig {
            sigma_p: 0.0,
            sigma_q: 0.0,
            sigma_pmu_v: 0.0,
            sigma_pmu_theta: 0.0,
            sigma_alpha: 0.0,
            sigma_beta: 0.0,
            ..self.clone()
        }
    }

    /// Parses a JSON or TOML key-value document (format chosen by `.toml`
    /// extension or by a leading `{`).
    pub fn from_str_auto(text: &str, toml_hint: bool) -> Result<Self, MeasureError> {
        let cfg: MeasurementConfig = if toml_hint || !text.trim_start().starts_with('{') {
            toml::from_str(text).map_err(|e| MeasureError::Parse(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| MeasureError::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, MeasureError> {
        let text = std::fs::read_to_string(path)?;
        let toml_hint = path.extension().is_some_and(|e| e == "toml");
        Self::from_str_auto(&text, toml_hint)
    }
}

/// Universal time of sample `t` in interval `k`: `kT + T·t/(M−1)`.
pub fn tau(k: usize, t: usize, period: f64, samples: usize) -> Result<f64, MeasureError> {
    if samples < 2 || t >= samples {
        return Err(MeasureError::SampleIndex { t, samples });
    }
    Ok(k as f64 * period + period * t as f64 / (samples - 1) as f64)
}

/// Per-PMU clock error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockError {
    /// Skew, rad/s.
    pub alpha: f64,
    /// Offset, rad.
    pub beta: f64,
}

/// Angle error `β + α·T/(M−1)·t` at sample `t`.
pub fn desync_phase(clock: &ClockError, t: usize, cfg: &MeasurementConfig) -> f64 {
    clock.beta + clock.alpha * cfg.sample_spacing() * t as f64
}

/// Ordered set of PMU-equipped buses (0-based indices, never the slack).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Placement {
    buses: Vec<usize>,
}

impl Placement {
    /// Validates `buses` against a network with `n` buses and slack `slack`.
    pub fn new(buses: Vec<usize>, n: usize, slack: usize) -> Result<Self, MeasureError> {
        for (i, &h) in buses.iter().enumerate() {
            if h >= n {
                return Err(MeasureError::Placement(format!(
                    "bus {} does not exist",
                    h + 1
                )));
            }
            if h == slack {
                return Err(MeasureError::Placement(format!(
                    "bus {} is the slack bus; its voltage is the reference",
                    h + 1
                )));
            }
            if buses[..i].contains(&h) {
                return Err(MeasureError::Placement(format!(
                    "bus {} listed twice",
                    h + 1
                )));
            }
        }
        Ok(Placement { buses })
    }

    /// From 1-based bus ids.
    pub fn from_ids(ids: &[usize], n: usize, slack: usize) -> Result<Self, MeasureError> {
        if ids.contains(&0) {
            return Err(MeasureError::Placement("bus ids start at 1".into()));
        }
        Self::new(ids.iter().map(|id| id - 1).collect(), n, slack)
    }

    /// Buses in the order they were placed.
    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    /// Buses sorted by id; the ordering used for measurement vectors.
    pub fn measured(&self) -> Vec<usize> {
        let mut sorted = self.buses.clone();
        sorted.sort_unstable();
        sorted
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    /// First `k` buses of the placement order.
    pub fn prefix(&self, k: usize) -> Placement {
        Placement {
            buses: self.buses[..k.min(self.buses.len())].to_vec(),
        }
    }
}

/// One reporting instant: readings at the measured buses in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuFrame {
    pub k: usize,
    pub t: usize,
    pub v_meas: Vec<f64>,
    pub theta_meas: Vec<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Draws demand realizations around the nominal values at load buses. Each
/// bus gets an independent bivariate Gaussian with standard deviations
/// `σ_p|p*|`, `σ_q|q*|` and correlation `η`; entries outside `loads` are
/// copied unchanged.
pub fn draw_demand_truth<R: Rng + ?Sized>(
    p_nom: &[f64],
    q_nom: &[f64],
    loads: &[usize],
    cfg: &MeasurementConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut p = p_nom.to_vec();
    let mut q = q_nom.to_vec();
    let rho = cfg.eta;
    let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
    for &h in loads {
        let z1 = normal(rng);
        let z2 = normal(rng);
        p[h] += cfg.sigma_p * p_nom[h].abs() * z1;
        q[h] += cfg.sigma_q * q_nom[h].abs() * (rho * z1 + rho_c * z2);
    }
    (p, q)
}

/// Independent `α ∼ N(0, σ_α²)`, `β ∼ N(0, σ_β²)` for `m` PMUs.
pub fn draw_clock<R: Rng + ?Sized>(
    cfg: &MeasurementConfig,
    m: usize,
    rng: &mut R,
) -> Vec<ClockError> {
    (0..m)
        .map(|_| {
            let alpha = cfg.sigma_alpha * normal(rng);
            let beta = cfg.sigma_beta * normal(rng);
            ClockError { alpha, beta }
        })
        .collect()
}

/// Emits the `M` frames of interval `k`. The truth is held constant over the
/// interval. Magnitude noise is `N(0, σ_v² v_nom²)` with `v_nom` the nominal
/// magnitude; angle noise is `N(0, σ_θ²)` plus the clock error. `clocks` and
/// `v_nom` are aligned with `placement.measured()`.
pub fn simulate_pmu_stream<R: Rng + ?Sized>(
    truth: &GridState,
    placement: &Placement,
    clocks: &[ClockError],
    v_nom: &[f64],
    cfg: &MeasurementConfig,
    k: usize,
    rng: &mut R,
) -> Vec<PmuFrame> {
    let measured = placement.measured();
    assert_eq!(clocks.len(), measured.len());
    assert_eq!(v_nom.len(), measured.len());
    (0..cfg.samples)
        .map(|t| {
            let mut v_meas = Vec::with_capacity(measured.len());
            let mut theta_meas = Vec::with_capacity(measured.len());
            for (i, &h) in measured.iter().enumerate() {
                let wv = cfg.sigma_pmu_v * v_nom[i].abs() * normal(rng);
                let wth = cfg.sigma_pmu_theta * normal(rng);
                v_meas.push(truth.v[h] + wv);
                theta_meas.push(truth.theta[h] + wth + desync_phase(&clocks[i], t, cfg));
            }
            PmuFrame {
                k,
                t,
                v_meas,
                theta_meas,
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamRecord {
    k: usize,
    t: usize,
    bus: usize,
    v_meas: f64,
    theta_meas: f64,
}

/// Writes frames as CSV `k,t,bus,v_meas,theta_meas` with 1-based bus ids.
pub fn write_stream_csv<W: Write>(
    frames: &[PmuFrame],
    measured: &[usize],
    out: W,
) -> Result<(), MeasureError> {
    let mut w = csv::Writer::from_writer(out);
    for f in frames {
        for (i, &h) in measured.iter().enumerate() {
            w.serialize(StreamRecord {
                k: f.k,
                t: f.t,
                bus: h + 1,
                v_meas: f.v_meas[i],
                theta_meas: f.theta_meas[i],
            })
            .map_err(|e| MeasureError::Stream {
                line: 0,
                message: e.to_string(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a stream CSV for the given measured buses (0-based, id order).
/// Frames must arrive in order `t = 0..M−1` within each interval `k`, with
/// one row per measured bus.
pub fn read_stream_csv<R: Read>(
    input: R,
    measured: &[usize],
    samples: usize,
) -> Result<Vec<PmuFrame>, MeasureError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut frames: Vec<PmuFrame> = Vec::new();
    let mut current: Option<(PmuFrame, Vec<bool>, u64)> = None;
    let (mut next_k, mut next_t) = (0usize, 0usize);

    let finish = |frame: PmuFrame, seen: Vec<bool>, line: u64, frames: &mut Vec<PmuFrame>| {
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(MeasureError::Stream {
                line,
                message: format!(
                    "frame (k={}, t={}) lacks bus {}",
                    frame.k,
                    frame.t,
                    measured[missing] + 1
                ),
            });
        }
        frames.push(frame);
        Ok(())
    };

    let csv_err = |e: csv::Error| MeasureError::Stream {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line());
        let rec: StreamRecord =
            record
                .deserialize(Some(&headers))
                .map_err(|e| MeasureError::Stream {
                    line,
                    message: e.to_string(),
                })?;
        let same = matches!(&current, Some((f, _, _)) if f.k == rec.k && f.t == rec.t);
        if !same {
            if let Some((f, seen, start)) = current.take() {
                finish(f, seen, start, &mut frames)?;
            }
            if (rec.k, rec.t) != (next_k, next_t) {
                return Err(MeasureError::OutOfOrder {
                    line,
                    expected_k: next_k,
                    expected_t: next_t,
                    k: rec.k,
                    t: rec.t,
                });
            }
            if rec.t + 1 == samples {
                next_k += 1;
                next_t = 0;
            } else {
                next_t += 1;
            }
            let m = measured.len();
            current = Some((
                PmuFrame {
                    k: rec.k,
                    t: rec.t,
                    v_meas: vec![0.0; m],
                    theta_meas: vec![0.0; m],
                },
                vec![false; m],
                line,
            ));
        }
        let (frame, seen, _) = current.as_mut().expect("frame in progress");
        let pos = rec
            .bus
            .checked_sub(1)
            .and_then(|h| measured.iter().position(|&m| m == h))
            .ok_or_else(|| MeasureError::Stream {
                line,
                message: format!("bus {} is not a PMU bus", rec.bus),
            })?;
        if seen[pos] {
            return Err(MeasureError::Stream {
                line,
                message: format!("duplicate reading for bus {}", rec.bus),
            });
        }
        if !(rec.v_meas.is_finite() && rec.theta_meas.is_finite()) {
            return Err(MeasureError::Stream {
                line,
                message: "non-finite reading".into(),
            });
        }
        seen[pos] = true;
        frame.v_meas[pos] = rec.v_meas;
        frame.theta_meas[pos] = rec.theta_meas;
    }
    if let Some((f, seen, start)) = current.take() {
        finish(f, seen, start, &mut frames)?;
    }
    if next_t != 0 {
        return Err(MeasureError::Stream {
            line: reader.position().line(),
            message: format!("stream ends inside interval {next_k} at t={next_t}"),
        });
    }
    Ok(frames)
}
