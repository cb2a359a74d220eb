use nalgebra::DMatrix;
use num_complex::Complex64;

use super::AnalysisError;

/// `√((1/N) Σ_i (1/n) Σ_h |a_h − b_h|²)` over `N` runs of `n`-vectors.
pub fn empirical_armse(truth: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<f64, AnalysisError> {
    if truth.is_empty() || truth.len() != estimates.len() {
        return Err(AnalysisError::Dimension(format!(
            "{} truth runs vs {} estimate runs",
            truth.len(),
            estimates.len()
        )));
    }
    let mut total = 0.0;
    for (i, (a, b)) in truth.iter().zip(estimates).enumerate() {
        if a.len() != b.len() || a.is_empty() {
            return Err(AnalysisError::Dimension(format!(
                "run {i}: {} truth entries vs {} estimates",
                a.len(),
                b.len()
            )));
        }
        total += mean_squared_error(a, b);
    }
    Ok((total / truth.len() as f64).sqrt())
}

pub(crate) fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// `√(Tr(Σ)/n)`.
pub fn theoretical_armse(sigma: &DMatrix<f64>, n: usize) -> f64 {
    (sigma.trace().max(0.0) / n as f64).sqrt()
}

/// Per-bus total vector error `|v̂e^{jθ̂} − ve^{jθ}| / |ve^{jθ}|` at one
/// instant.
pub fn tve(v_hat: &[f64], theta_hat: &[f64], v_ref: &[f64], theta_ref: &[f64]) -> Vec<f64> {
    assert!(
        v_hat.len() == theta_hat.len()
            && v_hat.len() == v_ref.len()
            && v_ref.len() == theta_ref.len(),
        "tve inputs must be aligned"
    );
    (0..v_hat.len())
        .map(|h| {
            let est = Complex64::from_polar(v_hat[h], theta_hat[h]);
            let reference = Complex64::from_polar(v_ref[h], theta_ref[h]);
            (est - reference).norm() / reference.norm()
        })
        .collect()
}

/// Total vector error per window and bus, time-averaged within each window.
#[derive(Debug, Clone, PartialEq)]
pub struct TveReport {
    /// `per_window[w][h]`.
    pub per_window: Vec<Vec<f64>>,
}

/// One window of aligned estimate and reference phasors, indexed `[t][h]`.
pub struct TveWindow<'a> {
    pub v_hat: &'a [Vec<f64>],
    pub theta_hat: &'a [Vec<f64>],
    pub v_ref: &'a [Vec<f64>],
    pub theta_ref: &'a [Vec<f64>],
}

impl TveReport {
    pub fn from_windows(windows: &[TveWindow<'_>]) -> Self {
        let per_window = windows
            .iter()
            .map(|w| {
                let n = w.v_hat.first().map_or(0, Vec::len);
                let mut acc = vec![0.0; n];
                for t in 0..w.v_hat.len() {
                    let e = tve(&w.v_hat[t], &w.theta_hat[t], &w.v_ref[t], &w.theta_ref[t]);
                    for (a, x) in acc.iter_mut().zip(e) {
                        *a += x;
                    }
                }
                let len = w.v_hat.len().max(1) as f64;
                acc.into_iter().map(|a| a / len).collect()
            })
            .collect();
        TveReport { per_window }
    }
}
