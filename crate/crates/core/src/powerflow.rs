//! AC power-flow map and Newton solver.
//!
//! The residual is `F(ξ) = [Re; Im](diag(u)·conj(Y u) − (p + jq))`, stacked as
//! the `n` active-power rows followed by the `n` reactive-power rows. The
//! solver closes the system with one slack bus (fixed `v`, `θ`) and PQ buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::norm_inf;
use crate::network::{build_admittance, AdmittanceMatrix, Network};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PowerFlowError {
    #[error(
        "power flow did not converge after {iterations} iterations (last ‖F‖∞ = {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("power-flow Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("injection vectors have length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// `ξ = (v, θ, p, q)`, one entry per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl GridState {
    pub fn flat(n: usize) -> Self {
        GridState {
            v: vec![1.0; n],
            theta: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.v
            .iter()
            .zip(&self.theta)
            .map(|(&v, &th)| Complex64::from_polar(v, th))
            .collect()
    }
}

/// A state on the power-flow manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub state: GridState,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Initial `(v, θ)`; flat start when `None`.
    pub initial: Option<GridState>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            initial: None,
        }
    }
}

/// Complex power `diag(u)·conj(Y u)` computed from `(v, θ)`.
pub fn power_injection(y: &AdmittanceMatrix, v: &[f64], theta: &[f64]) -> Vec<Complex64> {
    let u: DVector<Complex64> = DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(theta)
            .map(|(&v, &th)| Complex64::from_polar(v, th)),
    );
    let current = &y.0 * &u;
    u.iter()
        .zip(current.iter())
        .map(|(u, i)| u * i.conj())
        .collect()
}

impl AdmittanceMatrix {
    pub fn residual(&self, state: &GridState) -> DVector<f64> {
        let n = state.n();
        let s = power_injection(self, &state.v, &state.theta);
        DVector::from_fn(2 * n, |r, _| {
            if r < n {
                s[r].re - state.p[r]
            } else {
                s[r - n].im - state.q[r - n]
            }
        })
    }

    /// Analytic `∂(p, q)/∂(v, θ)` of `diag(u)·conj(Y u)`, columns `v` then `θ`.
    pub fn jacobian(&self, v: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let n = v.len();
        let y = &self.0;
        let u: Vec<Complex64> = v
            .iter()
            .zip(theta)
            .map(|(&v, &th)| Complex64::from_polar(v, th))
            .collect();
        let dir: Vec<Complex64> = theta
            .iter()
            .map(|&th| Complex64::from_polar(1.0, th))
            .collect();
        let current: Vec<Complex64> = (0..n)
            .map(|h| (0..n).map(|k| y[(h, k)] * u[k]).sum())
            .collect();
        let j = Complex64::i();
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for h in 0..n {
            for k in 0..n {
                // dS/dVm = diag(u) conj(Y diag(e^jθ)) + conj(diag(i)) diag(e^jθ)
                let mut ds_dv = u[h] * (y[(h, k)] * dir[k]).conj();
                // dS/dθ = j diag(u) conj(diag(i) - Y diag(u))
                let mut ds_dth = -j * u[h] * (y[(h, k)] * u[k]).conj();
                if h == k {
                    ds_dv += current[h].conj() * dir[h];
                    ds_dth += j * u[h] * current[h].conj();
                }
                jac[(h, k)] = ds_dv.re;
                jac[(h + n, k)] = ds_dv.im;
                jac[(h, k + n)] = ds_dth.re;
                jac[(h + n, k + n)] = ds_dth.im;
            }
        }
        jac
    }
}

/// Evaluates `F(ξ)` for `state` on `net`.
pub fn pf_residual(net: &Network, state: &GridState) -> DVector<f64> {
    build_admittance(net).residual(state)
}

/// Solves the AC power flow by Newton iteration. `p`, `q` give the injections
/// at every bus; slack entries are ignored and returned as computed.
pub fn solve_power_flow(
    net: &Network,
    p: &[f64],
    q: &[f64],
    opts: &PowerFlowOptions,
) -> Result<OperatingPoint, PowerFlowError> {
    let y = build_admittance(net);
    solve_with_admittance(net, &y, p, q, opts)
}

pub fn solve_with_admittance(
    net: &Network,
    y: &AdmittanceMatrix,
    p: &[f64],
    q: &[f64],
    opts: &PowerFlowOptions,
) -> Result<OperatingPoint, PowerFlowError> {
    let n = net.n();
    for len in [p.len(), q.len()] {
        if len != n {
            return Err(PowerFlowError::Dimension {
                expected: n,
                got: len,
            });
        }
    }
    let slack = net.slack_index();
    let slack_bus = &net.buses()[slack];
    let loads = net.load_indices();
    let nl = loads.len();

    let mut state = match &opts.initial {
        Some(init) => GridState {
            v: init.v.clone(),
            theta: init.theta.clone(),
            p: p.to_vec(),
            q: q.to_vec(),
        },
        None => GridState {
            v: vec![1.0; n],
            theta: vec![slack_bus.theta_set; n],
            p: p.to_vec(),
            q: q.to_vec(),
        },
    };
    state.v[slack] = slack_bus.v_set;
    state.theta[slack] = slack_bus.theta_set;

    // Rows: load p then load q; columns: load v then load θ.
    let rows: Vec<usize> = loads
        .iter()
        .copied()
        .chain(loads.iter().map(|&h| h + n))
        .collect();
    let mut last = f64::INFINITY;
    for iteration in 0..=opts.max_iter {
        let s = power_injection(y, &state.v, &state.theta);
        state.p[slack] = s[slack].re;
        state.q[slack] = s[slack].im;
        let residual = y.residual(&state);
        let mismatch = DVector::from_iterator(2 * nl, rows.iter().map(|&r| residual[r]));
        last = norm_inf(&residual);
        if !last.is_finite() {
            break;
        }
        if last <= opts.tolerance {
            if state.v.iter().any(|&v| v <= 0.0) {
                break;
            }
            return Ok(OperatingPoint {
                state,
                residual_norm: last,
                iterations: iteration,
            });
        }
        if iteration == opts.max_iter {
            break;
        }
        let full = y.jacobian(&state.v, &state.theta);
        let jac = crate::linalg::submatrix(&full, &rows, &rows);
        let step = jac
            .lu()
            .solve(&(-mismatch))
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::SingularJacobian { iteration })?;
        for (i, &h) in loads.iter().enumerate() {
            state.v[h] += step[i];
            state.theta[h] += step[i + nl];
        }
    }
    Err(PowerFlowError::NonConvergence {
        iterations: opts.max_iter,
        residual: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    pub(crate) fn two_bus() -> Network {
        parse_network(
            r#"{"buses": [
                {"id": 1, "role": "slack", "v_set": 1.0, "theta_set": 0.0},
                {"id": 2, "role": "load", "p_nom": 0.0, "q_nom": 0.0}],
               "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 1.0}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn flat_profile_is_on_manifold() {
        let r = pf_residual(&two_bus(), &GridState::flat(2));
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn residual_is_affine_in_injections() {
        let net = two_bus();
        let mut state = GridState::flat(2);
        state.theta[1] = -0.07;
        state.v[1] = 0.98;
        let base = pf_residual(&net, &state);
        state.p[1] += 0.3;
        let moved = pf_residual(&net, &state);
        let diff = moved - base;
        for (i, d) in diff.iter().enumerate() {
            let expected = if i == 1 { -0.3 } else { 0.0 };
            assert!((d - expected).abs() < 1e-15, "entry {i}: {d}");
        }
    }

    #[test]
    fn two_bus_symbolic_residual() {
        // For b = -1, v1 = 1, θ1 = 0: p2 = v2 sin θ2, q2 = v2² − v2 cos θ2.
        let net = two_bus();
        let state = GridState {
            v: vec![1.0, 1.0],
            theta: vec![0.0, -0.1],
            p: vec![0.0; 2],
            q: vec![0.0; 2],
        };
        let r = pf_residual(&net, &state);
        assert!((r[1] - (-0.1f64).sin()).abs() < 1e-15);
        assert!((r[3] - (1.0 - (-0.1f64).cos())).abs() < 1e-15);
        assert!((r[0] + r[1]).abs() < 1e-15);
    }

    #[test]
    fn flat_solution_for_zero_injection() {
        let op = solve_power_flow(&two_bus(), &[0.0; 2], &[0.0; 2], &Default::default()).unwrap();
        assert_eq!(op.state.v, vec![1.0, 1.0]);
        assert_eq!(op.state.theta, vec![0.0, 0.0]);
        assert_eq!(op.iterations, 0);
    }

    #[test]
    fn infeasible_load_fails() {
        let err = solve_power_flow(&two_bus(), &[0.0, -10.0], &[0.0; 2], &Default::default())
            .unwrap_err();
        assert!(
            matches!(err, PowerFlowError::NonConvergence { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn dimension_checked() {
        let err = solve_power_flow(&two_bus(), &[0.0], &[0.0; 2], &Default::default()).unwrap_err();
        assert_eq!(
            err,
            PowerFlowError::Dimension {
                expected: 2,
                got: 1
            }
        );
    }
}
