//! Closed-form two-node network: one slack, one load bus, one PMU reading
//! the angle `θ` corrupted by offset `β` and skew `α`.
//!
//! With `x = (θ, β, α)` the `M` readings of one interval are
//! `y(t) = θ + β + α·t·T/(M−1) + w(t)`, so `C` has rows `[1, 1, t·T/(M−1)]`.

use nalgebra::{Matrix3, Vector3};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoNodeParams {
    pub sigma_theta: f64,
    pub sigma_beta: f64,
    pub sigma_alpha: f64,
    /// PMU angle noise std.
    pub sigma_r: f64,
    pub period: f64,
    pub samples: usize,
}

impl TwoNodeParams {
    pub fn new(
        sigma_theta: f64,
        sigma_beta: f64,
        sigma_alpha: f64,
        sigma_r: f64,
        period: f64,
        samples: usize,
    ) -> Result<Self, AnalysisError> {
        let p = TwoNodeParams {
            sigma_theta,
            sigma_beta,
            sigma_alpha,
            sigma_r,
            period,
            samples,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        for (name, v) in [
            ("sigma_theta", self.sigma_theta),
            ("sigma_beta", self.sigma_beta),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_r", self.sigma_r),
            ("T", self.period),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AnalysisError::Config(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.samples < 2 {
            return Err(AnalysisError::Config(format!(
                "M must be ≥ 2, got {}",
                self.samples
            )));
        }
        Ok(())
    }

    /// Table-1 values: `σ_θ = 0.5`, `σ_β = 2e-4`, `σ_α = 1e-2`, `σ_r = 1e-3`,
    /// `T = 1`, `M = 30`.
    pub fn table1() -> Self {
        TwoNodeParams {
            sigma_theta: 0.5,
            sigma_beta: 2e-4,
            sigma_alpha: 1e-2,
            sigma_r: 1e-3,
            period: 1.0,
            samples: 30,
        }
    }

    fn spacing(&self) -> f64 {
        self.period / (self.samples - 1) as f64
    }

    /// Row `t` of `C`.
    pub fn row(&self, t: usize) -> Vector3<f64> {
        Vector3::new(1.0, 1.0, t as f64 * self.spacing())
    }

    pub fn prior(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.sigma_theta.powi(2),
            self.sigma_beta.powi(2),
            self.sigma_alpha.powi(2),
        ))
    }
}

/// Posterior covariance `(Σ₀⁻¹ + CᵀR⁻¹C)⁻¹` of `(θ, β, α)` after one
/// interval.
///
/// `θ` and `β` enter every reading only through `s = θ + β`, which makes the
/// information matrix nearly singular in `(θ, β)` for large `M`. The inverse
/// is therefore taken in the coordinates `(s, β, α)`, where it is well
/// conditioned, and mapped back.
pub fn two_node_posterior(p: &TwoNodeParams) -> Matrix3<f64> {
    let m = p.samples as f64;
    let sp = p.spacing();
    let s1 = sp * m * (m - 1.0) / 2.0;
    let s2 = sp * sp * (m - 1.0) * m * (2.0 * m - 1.0) / 6.0;
    let r = p.sigma_r.powi(2);
    let it = p.sigma_theta.powi(-2);
    let ib = p.sigma_beta.powi(-2);
    let ia = p.sigma_alpha.powi(-2);
    let info = Matrix3::new(
        it + m / r,
        -it,
        s1 / r,
        -it,
        it + ib,
        0.0,
        s1 / r,
        0.0,
        ia + s2 / r,
    );
    let reparam = info
        .cholesky()
        .expect("information matrix is positive definite for valid parameters")
        .inverse();
    // θ = s − β.
    let b = Matrix3::new(1.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let sigma = b * reparam * b.transpose();
    (sigma + sigma.transpose()) * 0.5
}

/// Large-`MT` behaviour of the two-node posterior.
#[derive(Debug, Clone, Copy)]
pub struct TwoNodeLimits {
    /// Limit of the posterior as `MT → ∞`.
    pub limit: Matrix3<f64>,
    params: TwoNodeParams,
}

impl TwoNodeLimits {
    /// Posterior offset variance `[Σ]₂₂` at the given prior stds.
    pub fn sigma22(&self, sigma_theta: f64, sigma_beta: f64) -> f64 {
        two_node_posterior(&TwoNodeParams {
            sigma_theta,
            sigma_beta,
            ..self.params
        })[(1, 1)]
    }

    /// Posterior skew variance `[Σ]₃₃` after `samples` readings over `period`.
    pub fn sigma33(&self, samples: usize, period: f64) -> f64 {
        two_node_posterior(&TwoNodeParams {
            samples,
            period,
            ..self.params
        })[(2, 2)]
    }
}

/// The limit matrix has `±σ_θ²σ_β²/(σ_θ²+σ_β²)` in the `(θ, β)` block and
/// zeros elsewhere; `σ₂₂` and `σ₃₃` are evaluated from the exact posterior.
pub fn two_node_limits(p: &TwoNodeParams) -> TwoNodeLimits {
    let (vt, vb) = (p.sigma_theta.powi(2), p.sigma_beta.powi(2));
    let a = if vt + vb > 0.0 {
        vt * vb / (vt + vb)
    } else {
        0.0
    };
    let mut limit = Matrix3::zeros();
    limit[(0, 0)] = a;
    limit[(1, 1)] = a;
    limit[(0, 1)] = -a;
    limit[(1, 0)] = -a;
    TwoNodeLimits { limit, params: *p }
}

/// Correlation between `θ` and `β` in a two-node covariance.
pub fn theta_beta_correlation(sigma: &Matrix3<f64>) -> f64 {
    sigma[(0, 1)] / (sigma[(0, 0)] * sigma[(1, 1)]).sqrt()
}
