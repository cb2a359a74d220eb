use super::{voltage_covariance, AnalysisError};
use crate::estimator::{build_state_space, offline_schedule, ResyncMode, Variant};
use crate::linearize::LinearModel;
use crate::measure::{MeasurementConfig, Placement};

/// Theoretical end-of-interval voltage ARMSE of the sync-aware filter for
/// `placement`.
pub fn placement_score(
    model: &LinearModel,
    cfg: &MeasurementConfig,
    placement: &Placement,
) -> Result<f64, AnalysisError> {
    let ssm = build_state_space(model, placement, cfg, Variant::SyncAware, ResyncMode::Reset)?;
    let schedule = offline_schedule(&ssm)?;
    let sigma_u = voltage_covariance(model, &ssm.demand_block(&schedule.covariances[cfg.samples]));
    Ok((sigma_u.trace() / sigma_u.nrows() as f64).sqrt())
}

/// Adds PMUs one at a time, each time at the load bus that most reduces the
/// end-of-interval voltage ARMSE. Ties go to the lowest bus id.
pub fn greedy_placement(
    model: &LinearModel,
    cfg: &MeasurementConfig,
    k_max: usize,
) -> Result<Placement, AnalysisError> {
    let loads = model.load_buses();
    if k_max > loads.len() {
        return Err(AnalysisError::Config(format!(
            "cannot place {k_max} PMUs on {} load buses",
            loads.len()
        )));
    }
    let n = model.n();
    let slack = model.slack_index();
    let mut placed: Vec<usize> = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        let mut best: Option<(f64, usize)> = None;
        for &h in loads.iter().filter(|h| !placed.contains(h)) {
            let mut trial = placed.clone();
            trial.push(h);
            let score = placement_score(model, cfg, &Placement::new(trial, n, slack)?)?;
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, h));
            }
        }
        placed.push(best.expect("a free load bus").1);
    }
    Ok(Placement::new(placed, n, slack)?)
}
