//! Tangent-plane linearization of the power-flow manifold.
//!
//! At an operating point `ξ* = (v*, θ*, p*, q*)` the manifold is approximated
//! by `A_u·(δv, δθ) = (δp, δq)` with
//!
//! ```text
//! A_u = (⌊diag conj(Y u*)⌋ + ⌊diag u*⌋ N ⌊Y⌋) R(u*)
//! ```
//!
//! where `⌊·⌋` is the real 2×2-block representation of a complex matrix,
//! `N = diag(I, −I)` conjugates, and `R(u)` maps polar increments to
//! rectangular ones. The sensitivity used downstream is the inverse of `A_u`
//! with the slack bus's balance rows and `(v, θ)` columns removed, which fixes
//! the voltage at the reference bus.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{condition_number, submatrix};
use crate::network::{build_admittance, Network};
use crate::powerflow::OperatingPoint;

pub const MAX_CONDITION: f64 = 1e12;
const MANIFOLD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LinearizeError {
    #[error(
        "slack-reduced A_u is singular (condition number {condition:e} > {MAX_CONDITION:e}); \
         the sensitivity map needs an invertible reduced tangent matrix"
    )]
    Singular { condition: f64 },
    #[error("operating point is off the power-flow manifold (‖F‖∞ = {residual:e})")]
    OffManifold { residual: f64 },
}

/// Real representation `[[Re A, −Im A], [Im A, Re A]]`.
pub fn bracket(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
            out[(i + r, j + c)] = z.re;
        }
    }
    out
}

/// `R(u) = [[diag cos θ, −diag v diag sin θ], [diag sin θ, diag v diag cos θ]]`.
pub fn rotation(v: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for h in 0..n {
        let (s, c) = theta[h].sin_cos();
        out[(h, h)] = c;
        out[(h, h + n)] = -v[h] * s;
        out[(h + n, h)] = s;
        out[(h + n, h + n)] = v[h] * c;
    }
    out
}

fn conjugation(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |i, j| match (i == j, i < n) {
        (true, true) => 1.0,
        (true, false) => -1.0,
        _ => 0.0,
    })
}

/// Full-network deviations `(δv, δθ, δp, δq)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentDelta {
    pub dv: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

/// Tangent-plane model at one operating point.
///
/// Reduced index spaces list the load buses in id order: the sensitivity maps
/// `(δp_L, δq_L)` to `(δv_L, δθ_L)`, each of length `2·n_loads`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    a_u: DMatrix<f64>,
    sensitivity: DMatrix<f64>,
    slack: usize,
    loads: Vec<usize>,
    point: OperatingPoint,
    condition: f64,
}

impl LinearModel {
    pub fn n(&self) -> usize {
        self.point.state.n()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// `A_u`, `2n × 2n`, columns `(v, θ)` and rows `(p, q)`.
    pub fn a_u(&self) -> &DMatrix<f64> {
        &self.a_u
    }

    /// Slack-reduced inverse, `2(n−1) × 2(n−1)`.
    pub fn sensitivity(&self) -> &DMatrix<f64> {
        &self.sensitivity
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// 0-based bus indices of the reduced coordinates.
    pub fn load_buses(&self) -> &[usize] {
        &self.loads
    }

    /// Position of bus `h` among load buses.
    pub fn load_position(&self, h: usize) -> Option<usize> {
        self.loads.iter().position(|&l| l == h)
    }

    pub fn point(&self) -> &OperatingPoint {
        &self.point
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Reduced `(δv_L, δθ_L) = S_u (δp_L, δq_L)` re-embedded as full vectors
    /// with zeros at the slack bus.
    pub fn apply_sensitivity(&self, dp: &[f64], dq: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nl = self.n_loads();
        assert_eq!(dp.len(), nl);
        assert_eq!(dq.len(), nl);
        let rhs = DVector::from_iterator(2 * nl, dp.iter().chain(dq).copied());
        let reduced = &self.sensitivity * rhs;
        self.embed(&reduced)
    }

    /// Embeds a reduced `(v_L, θ_L)` vector into full-length vectors.
    pub fn embed(&self, reduced: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let nl = self.n_loads();
        let mut dv = vec![0.0; n];
        let mut dth = vec![0.0; n];
        for (i, &h) in self.loads.iter().enumerate() {
            dv[h] = reduced[i];
            dth[h] = reduced[i + nl];
        }
        (dv, dth)
    }

    /// Tangent vector generated by load-bus power deviations. The slack bus
    /// powers follow from its rows of `A_u`.
    pub fn tangent_direction(&self, dp: &[f64], dq: &[f64]) -> TangentDelta {
        let n = self.n();
        let (dv, dtheta) = self.apply_sensitivity(dp, dq);
        let polar = DVector::from_iterator(2 * n, dv.iter().chain(&dtheta).copied());
        let powers = &self.a_u * polar;
        TangentDelta {
            dp: (0..n).map(|h| powers[h]).collect(),
            dq: (0..n).map(|h| powers[h + n]).collect(),
            dv,
            dtheta,
        }
    }
}

/// Assembles `A_u` at `(v, θ)` for admittance `Y`.
pub fn tangent_block(y: &DMatrix<Complex64>, v: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    let u = DVector::from_iterator(
        n,
        v.iter()
            .zip(theta)
            .map(|(&v, &th)| Complex64::from_polar(v, th)),
    );
    let current = y * &u;
    let diag_conj_i = DMatrix::from_diagonal(&current.map(|z| z.conj()));
    let diag_u = DMatrix::from_diagonal(&u);
    (bracket(&diag_conj_i) + bracket(&diag_u) * conjugation(n) * bracket(y)) * rotation(v, theta)
}

/// Builds the tangent-plane model of `net` at `pt`.
pub fn tangent_matrix(net: &Network, pt: &OperatingPoint) -> Result<LinearModel, LinearizeError> {
    let y = build_admittance(net);
    let residual = crate::linalg::norm_inf(&y.residual(&pt.state));
    if residual > MANIFOLD_TOLERANCE {
        return Err(LinearizeError::OffManifold { residual });
    }
    let n = net.n();
    let a_u = tangent_block(&y.0, &pt.state.v, &pt.state.theta);
    let loads = net.load_indices();
    let idx: Vec<usize> = loads
        .iter()
        .copied()
        .chain(loads.iter().map(|&h| h + n))
        .collect();
    let reduced = submatrix(&a_u, &idx, &idx);
    let condition = condition_number(&reduced);
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(LinearizeError::Singular { condition });
    }
    let sensitivity = reduced
        .lu()
        .try_inverse()
        .ok_or(LinearizeError::Singular { condition })?;
    Ok(LinearModel {
        a_u,
        sensitivity,
        slack: net.slack_index(),
        loads,
        point: pt.clone(),
        condition,
    })
}
