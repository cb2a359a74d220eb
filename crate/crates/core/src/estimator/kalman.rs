use nalgebra::{DMatrix, DVector};

use super::{EstimatorError, ResyncMode, StateSpaceModel};
use crate::linalg::symmetrize;
use crate::linearize::LinearModel;
use crate::measure::PmuFrame;

/// Gains and covariances for one resync interval. `gains[t]` processes frame
/// `t`; `covariances[0]` is the prior and `covariances[t + 1]` the posterior
/// after frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub gains: Vec<DMatrix<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    /// Posterior covariance after frame `t`.
    pub fn posterior(&self, t: usize) -> &DMatrix<f64> {
        &self.covariances[t + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    /// Current resync interval.
    pub k: usize,
    /// Index of the next frame expected in interval `k`.
    pub t: usize,
}

impl FilterState {
    pub fn new(dim: usize) -> Self {
        FilterState {
            x_hat: DVector::zeros(dim),
            k: 0,
            t: 0,
        }
    }
}

/// Riccati recursion from `Σ₀`.
pub fn offline_schedule(ssm: &StateSpaceModel) -> Result<GainSchedule, EstimatorError> {
    offline_schedule_from(ssm, ssm.sigma0())
}

/// Riccati recursion from an arbitrary starting covariance. Each step uses
/// the output matrix of the frame it processes:
///
/// ```text
/// L = (Σ + W) Hᵀ (H (Σ + W) Hᵀ + R)⁻¹
/// Σ' = (I − L H)(Σ + W)(I − L H)ᵀ + L R Lᵀ
/// ```
pub fn offline_schedule_from(
    ssm: &StateSpaceModel,
    start: &DMatrix<f64>,
) -> Result<GainSchedule, EstimatorError> {
    let dim = ssm.dim();
    let r = ssm.measurement_noise();
    let mut covariances = Vec::with_capacity(ssm.samples() + 1);
    let mut gains = Vec::with_capacity(ssm.samples());
    let mut sigma = start.clone();
    symmetrize(&mut sigma);
    covariances.push(sigma.clone());
    for t in 0..ssm.samples() {
        let predicted = &sigma + ssm.process_noise();
        if ssm.m() == 0 {
            gains.push(DMatrix::zeros(dim, 0));
            sigma = predicted;
            covariances.push(sigma.clone());
            continue;
        }
        let h = ssm.h(t);
        let hp = &h * &predicted;
        let mut innovation = &hp * h.transpose() + r;
        symmetrize(&mut innovation);
        let chol = innovation
            .cholesky()
            .ok_or(EstimatorError::SingularInnovation { t })?;
        let gain = chol.solve(&hp).transpose();
        let i_lh = DMatrix::identity(dim, dim) - &gain * &h;
        sigma = &i_lh * &predicted * i_lh.transpose() + &gain * r * gain.transpose();
        symmetrize(&mut sigma);
        gains.push(gain);
        covariances.push(sigma.clone());
    }
    Ok(GainSchedule { gains, covariances })
}

/// Processes one frame: `x̂ ← x̂ + L(t)(y(t) − H(t) x̂)` with
/// `y = (ṽ − v*, θ̃ − θ*)`.
pub fn sase_step(
    fs: &FilterState,
    frame: &PmuFrame,
    schedule: &GainSchedule,
    ssm: &StateSpaceModel,
) -> Result<FilterState, EstimatorError> {
    if frame.k != fs.k || frame.t != fs.t || fs.t >= ssm.samples() {
        return Err(EstimatorError::OutOfOrder {
            expected_k: fs.k,
            expected_t: fs.t,
            k: frame.k,
            t: frame.t,
        });
    }
    let m = ssm.m();
    if frame.v_meas.len() != m || frame.theta_meas.len() != m {
        return Err(EstimatorError::FrameSize {
            expected: m,
            got: frame.v_meas.len().min(frame.theta_meas.len()),
        });
    }
    let y = DVector::from_iterator(2 * m, frame.v_meas.iter().chain(&frame.theta_meas).copied())
        - ssm.nominal_measurement();
    let innovation = y - ssm.h(frame.t) * &fs.x_hat;
    Ok(FilterState {
        x_hat: &fs.x_hat + &schedule.gains[frame.t] * innovation,
        k: fs.k,
        t: fs.t + 1,
    })
}

/// Moves to the next interval. Reset mode restarts from the prior; integrate
/// mode applies `F` (which adds `α·T` to `β`) and `Σ ← F Σ Fᵀ + W`.
pub fn resync(
    fs: &FilterState,
    sigma: &DMatrix<f64>,
    ssm: &StateSpaceModel,
) -> (FilterState, DMatrix<f64>) {
    match ssm.mode() {
        ResyncMode::Reset => (
            FilterState {
                x_hat: DVector::zeros(ssm.dim()),
                k: fs.k + 1,
                t: 0,
            },
            ssm.sigma0().clone(),
        ),
        ResyncMode::Integrate => {
            let f = ssm.resync_transition();
            let mut next = &f * sigma * f.transpose() + ssm.process_noise();
            symmetrize(&mut next);
            (
                FilterState {
                    x_hat: &f * &fs.x_hat,
                    k: fs.k + 1,
                    t: 0,
                },
                next,
            )
        }
    }
}

/// Filter output over a sequence of intervals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// State after each processed frame, in stream order.
    pub states: Vec<FilterState>,
    /// One schedule per interval.
    pub schedules: Vec<GainSchedule>,
}

impl Trajectory {
    /// Posterior covariance after the `i`-th processed frame.
    pub fn covariance(&self, i: usize) -> &DMatrix<f64> {
        let s = &self.states[i];
        self.schedules[s.k].posterior(s.t - 1)
    }
}

/// Runs the filter over consecutive intervals, resyncing after every
/// `M`-th frame. `first` is the schedule for interval 0; later schedules are
/// reused in reset mode and recomputed from the carried covariance in
/// integrate mode.
pub fn run_frames(
    ssm: &StateSpaceModel,
    first: &GainSchedule,
    frames: &[PmuFrame],
) -> Result<Trajectory, EstimatorError> {
    let mut fs = FilterState::new(ssm.dim());
    let mut schedules = vec![first.clone()];
    let mut states = Vec::with_capacity(frames.len());
    for frame in frames {
        if fs.t == ssm.samples() {
            let last = schedules.last().expect("schedule");
            let (next, sigma) = resync(&fs, &last.covariances[ssm.samples()], ssm);
            fs = next;
            let schedule = match ssm.mode() {
                ResyncMode::Reset => first.clone(),
                ResyncMode::Integrate => offline_schedule_from(ssm, &sigma)?,
            };
            schedules.push(schedule);
        }
        fs = sase_step(&fs, frame, &schedules[fs.k], ssm)?;
        states.push(fs.clone());
    }
    Ok(Trajectory { states, schedules })
}

/// Voltages implied by an estimate, with their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageEstimate {
    pub v_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Covariance of the reduced `(v_L, θ_L)`.
    pub sigma_u: DMatrix<f64>,
}

/// `(v̂, θ̂) = (v*, θ*) + S_u (δp̂, δq̂)` and `Σ^u = S_u Σ^{pq} S_uᵀ`.
pub fn recover_voltages(
    x_hat: &DVector<f64>,
    sigma: &DMatrix<f64>,
    model: &LinearModel,
) -> VoltageEstimate {
    let two_nl = 2 * model.n_loads();
    let s_u = model.sensitivity();
    let delta = s_u * x_hat.rows(0, two_nl);
    let (dv, dth) = model.embed(&delta);
    let state = &model.point().state;
    let mut sigma_u = s_u * sigma.view((0, 0), (two_nl, two_nl)) * s_u.transpose();
    symmetrize(&mut sigma_u);
    VoltageEstimate {
        v_hat: state.v.iter().zip(&dv).map(|(a, b)| a + b).collect(),
        theta_hat: state.theta.iter().zip(&dth).map(|(a, b)| a + b).collect(),
        sigma_u,
    }
}
