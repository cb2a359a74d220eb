//! Kalman estimation of demand deviations and PMU clock errors.
//!
//! The filter state is `x = (δp_L, δq_L, α, β)`: demand deviations at the
//! load buses followed by per-PMU skew and offset. Within one resync interval
//! the state is constant (up to process noise `W`) and the measurement at
//! sample `t` is
//!
//! ```text
//! y(t) = (ṽ − v*, θ̃ − θ*) = [G | D(t)] x + w,   D(t) = [0 0; t·T/(M−1)·I  I]
//! ```
//!
//! where `G` holds the measured rows of the slack-reduced sensitivity. The
//! desync-blind variant drops `α, β` and `D(t)`; it serves both the
//! ground-truth baseline (frames compensated with the true clocks) and the
//! blind baseline (frames used as received).

mod baselines;
mod kalman;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{min_eigenvalue, select_rows};
use crate::linearize::LinearModel;
use crate::measure::{MeasurementConfig, Placement};

pub use baselines::{blse_run, compensate_frames, gt_run, mismatched_riccati};
pub use kalman::{
    offline_schedule, offline_schedule_from, recover_voltages, resync, run_frames, sase_step,
    FilterState, GainSchedule, Trajectory, VoltageEstimate,
};

/// Variance added to zero diagonal entries of the demand prior.
pub const PRIOR_JITTER: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EstimatorError {
    #[error("PMU on slack bus {0}: its voltage is the reference")]
    PmuOnSlack(usize),
    #[error("measurement covariance R is singular (PMU noise std must be > 0)")]
    SingularNoise,
    #[error("innovation covariance is numerically singular at sample {t}")]
    SingularInnovation { t: usize },
    #[error("out-of-order frame: expected (k={expected_k}, t={expected_t}), got (k={k}, t={t})")]
    OutOfOrder {
        expected_k: usize,
        expected_t: usize,
        k: usize,
        t: usize,
    },
    #[error("frame has {got} readings, model expects {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("model dimensions disagree: {0}")]
    Dimension(String),
}

/// What happens at each resync instant `τ(k, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResyncMode {
    /// Restart from the prior: `x̂ = 0`, `Σ = Σ₀`.
    #[default]
    Reset,
    /// Carry the estimate through `F` with `β ← β + αT`.
    Integrate,
}

impl std::str::FromStr for ResyncMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reset" => Ok(ResyncMode::Reset),
            "integrate" => Ok(ResyncMode::Integrate),
            other => Err(format!("unknown resync mode `{other}` (reset|integrate)")),
        }
    }
}

/// Whether the clock parameters are part of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SyncAware,
    Blind,
}

/// Linear-Gaussian model for one resync interval.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    n_loads: usize,
    m: usize,
    desync: bool,
    sigma0: DMatrix<f64>,
    w: DMatrix<f64>,
    r: DMatrix<f64>,
    sensitivity_rows: DMatrix<f64>,
    period: f64,
    samples: usize,
    mode: ResyncMode,
    nominal_measurement: DVector<f64>,
}

/// Prior on demand deviations: per-bus 2×2 blocks with variances
/// `σ_p²|p*|²`, `σ_q²|q*|²` and covariance `η σ_p σ_q |p*||q*|`.
pub fn demand_prior(p_nom: &[f64], q_nom: &[f64], cfg: &MeasurementConfig) -> DMatrix<f64> {
    let nl = p_nom.len();
    let mut s = DMatrix::zeros(2 * nl, 2 * nl);
    for i in 0..nl {
        let sp = cfg.sigma_p * p_nom[i].abs();
        let sq = cfg.sigma_q * q_nom[i].abs();
        s[(i, i)] = sp * sp;
        s[(i + nl, i + nl)] = sq * sq;
        s[(i, i + nl)] = cfg.eta * sp * sq;
        s[(i + nl, i)] = cfg.eta * sp * sq;
    }
    s
}

impl StateSpaceModel {
    /// Assembles a model from explicit blocks. `sensitivity_rows` is
    /// `2m × 2n_loads` (magnitude rows then angle rows); `sigma0_pq` is the
    /// demand prior; `r_diag` has length `2m`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        sensitivity_rows: DMatrix<f64>,
        sigma0_pq: DMatrix<f64>,
        sigma_alpha: f64,
        sigma_beta: f64,
        r_diag: &[f64],
        period: f64,
        samples: usize,
        variant: Variant,
        mode: ResyncMode,
        nominal_measurement: DVector<f64>,
    ) -> Result<Self, EstimatorError> {
        let two_m = sensitivity_rows.nrows();
        let two_nl = sensitivity_rows.ncols();
        if !two_m.is_multiple_of(2) || !two_nl.is_multiple_of(2) {
            return Err(EstimatorError::Dimension("odd sensitivity block".into()));
        }
        if sigma0_pq.shape() != (two_nl, two_nl) {
            return Err(EstimatorError::Dimension("demand prior shape".into()));
        }
        if r_diag.len() != two_m || nominal_measurement.len() != two_m {
            return Err(EstimatorError::Dimension("measurement length".into()));
        }
        if r_diag.iter().any(|&r| r.is_nan() || r <= 0.0) {
            return Err(EstimatorError::SingularNoise);
        }
        let (n_loads, m) = (two_nl / 2, two_m / 2);
        let desync = variant == Variant::SyncAware;
        let dim = two_nl + if desync { two_m } else { 0 };
        let mut sigma0 = DMatrix::zeros(dim, dim);
        sigma0
            .view_mut((0, 0), (two_nl, two_nl))
            .copy_from(&sigma0_pq);
        let zero_diag = (0..two_nl).filter(|&i| sigma0[(i, i)] == 0.0).count();
        if zero_diag > 0 {
            warn!("{zero_diag} demand prior variance(s) are zero; adding {PRIOR_JITTER:e} jitter");
            for i in 0..two_nl {
                if sigma0[(i, i)] == 0.0 {
                    sigma0[(i, i)] = PRIOR_JITTER;
                }
            }
        }
        if desync {
            for i in 0..m {
                sigma0[(two_nl + i, two_nl + i)] = sigma_alpha * sigma_alpha;
                sigma0[(two_nl + m + i, two_nl + m + i)] = sigma_beta * sigma_beta;
            }
        }
        Ok(StateSpaceModel {
            n_loads,
            m,
            desync,
            sigma0,
            w: DMatrix::zeros(dim, dim),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(r_diag)),
            sensitivity_rows,
            period,
            samples,
            mode,
            nominal_measurement,
        })
    }

    /// Replaces the process noise covariance.
    pub fn with_process_noise(mut self, w: DMatrix<f64>) -> Result<Self, EstimatorError> {
        if w.shape() != self.sigma0.shape() {
            return Err(EstimatorError::Dimension("process noise shape".into()));
        }
        self.w = w;
        Ok(self)
    }

    /// Copy with `Σ₀`, `R` and `W` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        StateSpaceModel {
            sigma0: &self.sigma0 * c,
            w: &self.w * c,
            r: &self.r * c,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma0.nrows()
    }

    pub fn n_loads(&self) -> usize {
        self.n_loads
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_desync_states(&self) -> bool {
        self.desync
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn mode(&self) -> ResyncMode {
        self.mode
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn sensitivity_rows(&self) -> &DMatrix<f64> {
        &self.sensitivity_rows
    }

    /// `(v*, θ*)` at the measured buses.
    pub fn nominal_measurement(&self) -> &DVector<f64> {
        &self.nominal_measurement
    }

    /// `T/(M−1)`.
    pub fn spacing(&self) -> f64 {
        self.period / (self.samples - 1) as f64
    }

    /// Offset of the `α` block in the state.
    pub fn alpha_offset(&self) -> usize {
        2 * self.n_loads
    }

    /// Offset of the `β` block in the state.
    pub fn beta_offset(&self) -> usize {
        2 * self.n_loads + self.m
    }

    /// `D(t)`, `2m × 2m`, acting on `(α, β)`.
    pub fn desync_block(&self, t: usize) -> DMatrix<f64> {
        let m = self.m;
        let mut d = DMatrix::zeros(2 * m, 2 * m);
        let skew = t as f64 * self.spacing();
        for i in 0..m {
            d[(m + i, i)] = skew;
            d[(m + i, m + i)] = 1.0;
        }
        d
    }

    /// Output matrix at sample `t`.
    pub fn h(&self, t: usize) -> DMatrix<f64> {
        let two_nl = 2 * self.n_loads;
        let mut h = DMatrix::zeros(2 * self.m, self.dim());
        h.view_mut((0, 0), (2 * self.m, two_nl))
            .copy_from(&self.sensitivity_rows);
        if self.desync {
            h.view_mut((0, two_nl), (2 * self.m, 2 * self.m))
                .copy_from(&self.desync_block(t));
        }
        h
    }

    /// State transition applied at a resync instant in integrate mode.
    pub fn resync_transition(&self) -> DMatrix<f64> {
        let mut f = DMatrix::identity(self.dim(), self.dim());
        if self.desync {
            for i in 0..self.m {
                f[(self.beta_offset() + i, self.alpha_offset() + i)] = self.period;
            }
        }
        f
    }

    /// The `(δp, δq)` block of a state covariance.
    pub fn demand_block(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let two_nl = 2 * self.n_loads;
        sigma.view((0, 0), (two_nl, two_nl)).into_owned()
    }

    /// Desync-blind copy of this model with the same demand prior and noise.
    pub fn blind(&self) -> Self {
        let two_nl = 2 * self.n_loads;
        StateSpaceModel {
            desync: false,
            sigma0: self.demand_block(&self.sigma0),
            w: self.w.view((0, 0), (two_nl, two_nl)).into_owned(),
            ..self.clone()
        }
    }

    pub fn prior_min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.sigma0)
    }
}

/// Builds the state-space model for `placement` around `model`'s operating
/// point.
pub fn build_state_space(
    model: &LinearModel,
    placement: &Placement,
    cfg: &MeasurementConfig,
    variant: Variant,
    mode: ResyncMode,
) -> Result<StateSpaceModel, EstimatorError> {
    let nl = model.n_loads();
    let measured = placement.measured();
    let mut positions = Vec::with_capacity(measured.len());
    for &h in &measured {
        let pos = model
            .load_position(h)
            .ok_or(EstimatorError::PmuOnSlack(h + 1))?;
        positions.push(pos);
    }
    let rows: Vec<usize> = positions
        .iter()
        .copied()
        .chain(positions.iter().map(|&p| p + nl))
        .collect();
    let g = select_rows(model.sensitivity(), &rows);

    let state = &model.point().state;
    let loads = model.load_buses();
    let p_nom: Vec<f64> = loads.iter().map(|&h| state.p[h]).collect();
    let q_nom: Vec<f64> = loads.iter().map(|&h| state.q[h]).collect();
    let prior = demand_prior(&p_nom, &q_nom, cfg);

    let r_diag: Vec<f64> = measured
        .iter()
        .map(|&h| (cfg.sigma_pmu_v * state.v[h]).powi(2))
        .chain(measured.iter().map(|_| cfg.sigma_pmu_theta.powi(2)))
        .collect();
    let nominal = DVector::from_iterator(
        2 * measured.len(),
        measured
            .iter()
            .map(|&h| state.v[h])
            .chain(measured.iter().map(|&h| state.theta[h])),
    );
    StateSpaceModel::from_parts(
        g,
        prior,
        cfg.sigma_alpha,
        cfg.sigma_beta,
        &r_diag,
        cfg.period,
        cfg.samples,
        variant,
        mode,
        nominal,
    )
}
