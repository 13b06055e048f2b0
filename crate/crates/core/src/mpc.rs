//! Edge-side control stack: uplink-latency state estimation followed by
//! receding-horizon minimization of a quadratic tracking cost over a
//! single-shooting rollout of the vehicle model.
//!
//! The optimizer is projected gradient descent with Armijo backtracking
//! onto the input box; gradients come from a discrete adjoint sweep
//! through the RK4 rollout.

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, ControlCommand, InputVec, ModelParams, StateVec, UavState, INPUT_DIM, STATE_DIM,
};

pub type StateWeights = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputWeights = SMatrix<f64, INPUT_DIM, INPUT_DIM>;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("uplink delay must be non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("trajectory length {got} does not match horizon {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Prediction horizon, steps.
    pub n: usize,
    /// Discretization step of the prediction model, seconds.
    pub dt_mpc: f64,
    /// State weight matrix, symmetric PSD.
    pub q_x: StateWeights,
    /// Input weight matrix, symmetric PSD.
    pub q_u: InputWeights,
    /// Input-rate weight matrix, symmetric PSD.
    pub q_du: InputWeights,
    /// Input box lower bound per channel.
    pub u_min: InputVec,
    /// Input box upper bound per channel.
    pub u_max: InputVec,
    /// Optimizer iteration cap.
    pub max_iters: usize,
    /// Projected-gradient-norm stopping tolerance.
    pub grad_tol: f64,
    /// Execution rate of the controller, Hz.
    pub f_exec: f64,
}

impl MpcConfig {
    /// Default configuration around a given hover thrust.
    pub fn default_for(g: f64) -> Self {
        let q_x = StateWeights::from_diagonal(&StateVec::from_column_slice(&[
            8.0, 8.0, 12.0, 1.0, 1.0, 1.5, 2.0, 2.0,
        ]));
        let q_u = InputWeights::from_diagonal(&Vector3::new(1.0, 4.0, 4.0));
        let q_du = InputWeights::from_diagonal(&Vector3::new(2.0, 8.0, 8.0));
        Self {
            n: 40,
            dt_mpc: 0.05,
            q_x,
            q_u,
            q_du,
            u_min: Vector3::new(g - 0.5 * g, -0.35, -0.35),
            u_max: Vector3::new(g + 0.5 * g, 0.35, 0.35),
            max_iters: 40,
            grad_tol: 1e-3,
            f_exec: 20.0,
        }
    }

    /// Nominal execution period, seconds.
    pub fn t_exec(&self) -> f64 {
        1.0 / self.f_exec
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if self.n < 1 {
            return Err(MpcError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.dt_mpc <= 0.0 {
            return Err(MpcError::InvalidConfig("dt_mpc must be positive".into()));
        }
        if self.f_exec <= 0.0 {
            return Err(MpcError::InvalidConfig("f_exec must be positive".into()));
        }
        for (i, (lo, hi)) in self.u_min.iter().zip(self.u_max.iter()).enumerate() {
            if lo >= hi {
                return Err(MpcError::InvalidConfig(format!(
                    "u_min[{i}] must be below u_max[{i}]"
                )));
            }
        }
        for (name, m) in [("q_u", &self.q_u), ("q_du", &self.q_du)] {
            if (m - m.transpose()).amax() > 1e-9 {
                return Err(MpcError::InvalidConfig(format!("{name} must be symmetric")));
            }
        }
        if (self.q_x - self.q_x.transpose()).amax() > 1e-9 {
            return Err(MpcError::InvalidConfig("q_x must be symmetric".into()));
        }
        Ok(())
    }

    fn project(&self, u: &InputVec) -> InputVec {
        Vector3::new(
            u[0].clamp(self.u_min[0], self.u_max[0]),
            u[1].clamp(self.u_min[1], self.u_max[1]),
            u[2].clamp(self.u_min[2], self.u_max[2]),
        )
    }
}

/// Desired state/input pair the cost tracks over the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub x_d: StateVec,
    pub u_d: InputVec,
}

impl ReferencePoint {
    pub fn hover_at(p: Vector3<f64>, g: f64) -> Self {
        let mut x_d = StateVec::zeros();
        x_d[0] = p[0];
        x_d[1] = p[1];
        x_d[2] = p[2];
        Self {
            x_d,
            u_d: Vector3::new(g, 0.0, 0.0),
        }
    }
}

/// Per-term breakdown of the tracking cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub state_cost: f64,
    pub input_cost: f64,
    pub smoothness_cost: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.state_cost + self.input_cost + self.smoothness_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    IterationLimit,
    Stalled,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub iterations: usize,
    pub final_cost: f64,
    pub grad_norm: f64,
}

/// Propagates a delayed state forward by the uplink delay `l_u` with a
/// first-order Taylor expansion: positions by the measured velocity,
/// velocities and attitude by the model derivative evaluated at the
/// delayed state under the last applied command.
pub fn estimate_uplink_state(
    delayed: &UavState,
    last_u: &ControlCommand,
    l_u: f64,
    params: &ModelParams,
) -> Result<UavState, MpcError> {
    if l_u < 0.0 {
        return Err(MpcError::NegativeDelay(l_u));
    }
    let dx = dynamics::derivative(delayed, last_u, params);
    let vdot = Vector3::new(dx[3], dx[4], dx[5]);
    Ok(UavState {
        p: delayed.p + delayed.v * l_u,
        v: delayed.v + vdot * l_u,
        phi: dynamics::wrap_angle(delayed.phi + dx[6] * l_u),
        theta: dynamics::wrap_angle(delayed.theta + dx[7] * l_u),
        t: delayed.t + l_u,
    })
}

/// Evaluates the horizon cost over given state and input trajectories
/// against a per-step reference (preview).
///
/// `u_prev` anchors the first smoothness term.
pub fn eval_cost(
    x_traj: &[StateVec],
    u_traj: &[InputVec],
    u_prev: &InputVec,
    refs: &[ReferencePoint],
    cfg: &MpcConfig,
) -> Result<CostBreakdown, MpcError> {
    for len in [x_traj.len(), u_traj.len(), refs.len()] {
        if len != cfg.n {
            return Err(MpcError::DimensionMismatch {
                expected: cfg.n,
                got: len,
            });
        }
    }
    let mut out = CostBreakdown::default();
    let mut last_u = *u_prev;
    for ((x, u), r) in x_traj.iter().zip(u_traj.iter()).zip(refs.iter()) {
        let ex = r.x_d - x;
        let eu = r.u_d - u;
        let du = u - last_u;
        out.state_cost += (ex.transpose() * cfg.q_x * ex)[0];
        out.input_cost += (eu.transpose() * cfg.q_u * eu)[0];
        out.smoothness_cost += (du.transpose() * cfg.q_du * du)[0];
        last_u = *u;
    }
    Ok(out)
}

/// Rolls the prediction model out from `x0` under the input sequence.
pub fn rollout(
    x0: &StateVec,
    u_traj: &[InputVec],
    cfg: &MpcConfig,
    params: &ModelParams,
) -> Vec<StateVec> {
    let mut xs = Vec::with_capacity(u_traj.len());
    let mut x = *x0;
    for u in u_traj {
        x = dynamics::rk4_vec(&x, u, cfg.dt_mpc, params);
        xs.push(x);
    }
    xs
}

/// Cost of an input sequence through the rollout.
pub fn rollout_cost(
    x0: &StateVec,
    u_traj: &[InputVec],
    u_prev: &InputVec,
    refs: &[ReferencePoint],
    cfg: &MpcConfig,
    params: &ModelParams,
) -> f64 {
    let xs = rollout(x0, u_traj, cfg, params);
    eval_cost(&xs, u_traj, u_prev, refs, cfg)
        .expect("rollout produces matching lengths")
        .total()
}

/// Gradient of [`rollout_cost`] with respect to every input in the
/// sequence, by a backward adjoint sweep over the step Jacobians.
pub fn rollout_gradient(
    x0: &StateVec,
    u_traj: &[InputVec],
    u_prev: &InputVec,
    refs: &[ReferencePoint],
    cfg: &MpcConfig,
    params: &ModelParams,
) -> Vec<InputVec> {
    let n = u_traj.len();
    let mut phis = Vec::with_capacity(n);
    let mut gammas = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut x = *x0;
    for u in u_traj {
        let (xn, phi, gamma) = dynamics::rk4_vec_with_jacobians(&x, u, cfg.dt_mpc, params);
        xs.push(xn);
        phis.push(phi);
        gammas.push(gamma);
        x = xn;
    }

    let mut grads = vec![InputVec::zeros(); n];
    // Direct input terms: input cost and the two smoothness terms each u_j
    // participates in.
    for j in 0..n {
        let eu = u_traj[j] - refs[j].u_d;
        let prev = if j == 0 { *u_prev } else { u_traj[j - 1] };
        let mut g = cfg.q_u * eu * 2.0 + cfg.q_du * (u_traj[j] - prev) * 2.0;
        if j + 1 < n {
            g -= cfg.q_du * (u_traj[j + 1] - u_traj[j]) * 2.0;
        }
        grads[j] = g;
    }
    // Adjoint sweep: lambda_j = dJ/dx_j accumulated backward.
    let mut lambda = StateVec::zeros();
    for j in (0..n).rev() {
        lambda += cfg.q_x * (xs[j] - refs[j].x_d) * 2.0;
        grads[j] += gammas[j].transpose() * lambda;
        lambda = phis[j].transpose() * lambda;
    }
    grads
}

/// Receding-horizon solver holding the warm-started input sequence.
///
/// One instance must be confined to a single logical activity; `solve`
/// mutates the warm start.
pub struct MpcSolver {
    pub cfg: MpcConfig,
    pub params: ModelParams,
    warm: Option<Vec<InputVec>>,
    next_seq: u32,
}

impl MpcSolver {
    pub fn new(cfg: MpcConfig, params: ModelParams) -> Result<Self, MpcError> {
        cfg.validate()?;
        params
            .validate()
            .map_err(|e| MpcError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            cfg,
            params,
            warm: None,
            next_seq: 1,
        })
    }

    /// Clears the warm start (e.g. after a long offboard gap).
    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Solves one receding-horizon problem against a previewed reference
    /// (`refs[j]` is the desired point at step `j + 1`) and returns the
    /// first input of the minimizing sequence stamped as a command, the
    /// predicted state trajectory, and a solver report.
    ///
    /// A single reference point is broadcast over the horizon.
    ///
    /// On a non-finite cost the status is `Failed` and the returned command
    /// re-emits `u_prev`.
    pub fn solve(
        &mut self,
        x0: &UavState,
        refs: &[ReferencePoint],
        u_prev: &ControlCommand,
        t_now: f64,
        state_seq: u32,
    ) -> (ControlCommand, Vec<StateVec>, SolverReport) {
        let broadcast;
        let refs: &[ReferencePoint] = if refs.len() == 1 && self.cfg.n != 1 {
            broadcast = vec![refs[0]; self.cfg.n];
            &broadcast
        } else {
            refs
        };
        let cfg = &self.cfg;
        let params = &self.params;
        let x0v = x0.to_vec();
        let u_prev_v = u_prev.input();

        // Warm start: previous solution shifted by one step, last input
        // duplicated; first solve starts from the held input.
        let mut u: Vec<InputVec> = match self.warm.take() {
            Some(mut w) if w.len() == cfg.n => {
                w.rotate_left(1);
                let last = *w.last().expect("n >= 1");
                *w.last_mut().unwrap() = last;
                w
            }
            _ => vec![cfg.project(&u_prev_v); cfg.n],
        };
        for ui in u.iter_mut() {
            *ui = cfg.project(ui);
        }

        let mut cost = rollout_cost(&x0v, &u, &u_prev_v, refs, cfg, params);
        if !cost.is_finite() {
            let report = SolverReport {
                status: SolverStatus::Failed,
                iterations: 0,
                final_cost: cost,
                grad_norm: f64::NAN,
            };
            let cmd = ControlCommand::from_input(&u_prev_v, t_now, self.next_seq, state_seq);
            self.next_seq += 1;
            return (cmd, Vec::new(), report);
        }

        const ARMIJO_C: f64 = 1e-4;
        const SHRINK: f64 = 0.5;
        const MAX_BACKTRACKS: usize = 30;

        let mut alpha = 1.0;
        let mut status = SolverStatus::IterationLimit;
        let mut iterations = 0;
        let mut grad_norm = f64::NAN;
        let mut failed = false;

        for _ in 0..cfg.max_iters {
            iterations += 1;
            let g = rollout_gradient(&x0v, &u, &u_prev_v, refs, cfg, params);

            // Projected-gradient stationarity measure at unit step.
            let mut pg_sq = 0.0;
            for (uj, gj) in u.iter().zip(g.iter()) {
                let proj = cfg.project(&(uj - gj));
                pg_sq += (uj - proj).norm_squared();
            }
            grad_norm = pg_sq.sqrt();
            if grad_norm < cfg.grad_tol {
                status = SolverStatus::Converged;
                break;
            }

            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let cand: Vec<InputVec> = u
                    .iter()
                    .zip(g.iter())
                    .map(|(uj, gj)| cfg.project(&(uj - gj * alpha)))
                    .collect();
                let cand_cost = rollout_cost(&x0v, &cand, &u_prev_v, refs, cfg, params);
                if !cand_cost.is_finite() {
                    failed = true;
                    alpha *= SHRINK;
                    continue;
                }
                // Armijo condition on the projected step.
                let mut decrease = 0.0;
                for ((uj, cj), gj) in u.iter().zip(cand.iter()).zip(g.iter()) {
                    decrease += gj.dot(&(uj - cj));
                }
                if cand_cost <= cost - ARMIJO_C * decrease {
                    u = cand;
                    cost = cand_cost;
                    accepted = true;
                    failed = false;
                    alpha = (alpha * 2.0).min(16.0);
                    break;
                }
                alpha *= SHRINK;
            }
            if !accepted {
                status = if failed {
                    SolverStatus::Failed
                } else {
                    SolverStatus::Stalled
                };
                break;
            }
        }

        if status == SolverStatus::Failed {
            let report = SolverReport {
                status,
                iterations,
                final_cost: cost,
                grad_norm,
            };
            let cmd = ControlCommand::from_input(&u_prev_v, t_now, self.next_seq, state_seq);
            self.next_seq += 1;
            return (cmd, Vec::new(), report);
        }

        let predicted = rollout(&x0v, &u, cfg, params);
        let cmd = ControlCommand::from_input(&u[0], t_now, self.next_seq, state_seq);
        self.next_seq += 1;
        self.warm = Some(u);
        (
            cmd,
            predicted,
            SolverReport {
                status,
                iterations,
                final_cost: cost,
                grad_norm,
            },
        )
    }
}
