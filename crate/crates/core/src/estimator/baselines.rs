//! Ground-truth and desync-blind baselines, and the true error covariance of
//! the blind filter.

use nalgebra::DMatrix;

use super::{run_frames, EstimatorError, GainSchedule, StateSpaceModel, Trajectory};
use crate::linalg::symmetrize;
use crate::measure::{ClockError, PmuFrame};

/// Removes `β + α·T/(M−1)·t` from every angle reading. `clocks` is aligned
/// with the measured buses.
pub fn compensate_frames(
    frames: &[PmuFrame],
    clocks: &[ClockError],
    spacing: f64,
) -> Vec<PmuFrame> {
    frames
        .iter()
        .map(|f| PmuFrame {
            theta_meas: f
                .theta_meas
                .iter()
                .zip(clocks)
                .map(|(th, c)| th - c.beta - c.alpha * spacing * f.t as f64)
                .collect(),
            ..f.clone()
        })
        .collect()
}

/// Oracle baseline: exact clock compensation, then the blind filter.
pub fn gt_run(
    frames: &[PmuFrame],
    true_clocks: &[ClockError],
    blind: &StateSpaceModel,
    schedule: &GainSchedule,
) -> Result<Trajectory, EstimatorError> {
    if blind.has_desync_states() {
        return Err(EstimatorError::Dimension(
            "ground truth needs the blind model".into(),
        ));
    }
    let clean = compensate_frames(frames, true_clocks, blind.spacing());
    run_frames(blind, schedule, &clean)
}

/// Blind baseline: frames used as received.
pub fn blse_run(
    frames: &[PmuFrame],
    blind: &StateSpaceModel,
    schedule: &GainSchedule,
) -> Result<Trajectory, EstimatorError> {
    if blind.has_desync_states() {
        return Err(EstimatorError::Dimension(
            "blind baseline needs the blind model".into(),
        ));
    }
    run_frames(blind, schedule, frames)
}

/// True estimation-error covariance of the blind filter when the frames
/// carry clock errors with stds `sigma_alpha`, `sigma_beta`.
///
/// The clock parameters are zero-mean constants over the interval, so the
/// error `e = x − x̂` and `c = (α, β)` evolve jointly as
///
/// ```text
/// e' = (I − L H) e − L D(t) c − L w,   c' = c
/// ```
///
/// and the joint covariance is propagated exactly. Returns the `e` block,
/// aligned with `schedule.covariances`.
pub fn mismatched_riccati(
    blind: &StateSpaceModel,
    schedule: &GainSchedule,
    sigma_alpha: f64,
    sigma_beta: f64,
) -> Vec<DMatrix<f64>> {
    let ne = blind.dim();
    let m = blind.m();
    let nc = 2 * m;
    let n = ne + nc;
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (ne, ne))
        .copy_from(&schedule.covariances[0]);
    for i in 0..m {
        p[(ne + i, ne + i)] = sigma_alpha * sigma_alpha;
        p[(ne + m + i, ne + m + i)] = sigma_beta * sigma_beta;
    }
    let r = blind.measurement_noise();
    let w = blind.process_noise();
    let mut out = Vec::with_capacity(schedule.gains.len() + 1);
    out.push(p.view((0, 0), (ne, ne)).into_owned());
    for (t, gain) in schedule.gains.iter().enumerate() {
        {
            let mut e = p.view_mut((0, 0), (ne, ne));
            e += w;
        }
        let h = blind.h(t);
        let mut a = DMatrix::identity(n, n);
        a.view_mut((0, 0), (ne, ne))
            .copy_from(&(DMatrix::identity(ne, ne) - gain * &h));
        if m > 0 {
            a.view_mut((0, ne), (ne, nc))
                .copy_from(&(-(gain * blind.desync_block(t))));
        }
        let mut next = &a * &p * a.transpose();
        {
            let mut e = next.view_mut((0, 0), (ne, ne));
            e += gain * r * gain.transpose();
        }
        symmetrize(&mut next);
        p = next;
        out.push(p.view((0, 0), (ne, ne)).into_owned());
    }
    out
}
