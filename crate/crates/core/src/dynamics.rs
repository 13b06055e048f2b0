//! Continuous-time UAV model with a fixed-step RK4 integrator and the
//! command saturation boundary applied in front of the low-level controller.
//!
//! State layout used throughout the crate: `[p (3), v (3), phi, theta]`.
//! Inputs are `[thrust, phi_ref, theta_ref]` with thrust mass-normalized
//! (m/s²), so hover corresponds to `thrust = g`.

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 3;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type InputVec = Vector3<f64>;
pub type StateJacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputJacobian = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Largest step the fixed-step integrator accepts in one call.
pub const MAX_STEP_DT: f64 = 0.05;
/// Inner substep used by [`step`] when the requested dt is larger.
pub const INNER_DT: f64 = 0.005;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("integration step dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("integration step dt = {0} exceeds validity bound {MAX_STEP_DT}")]
    DtTooLarge(f64),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

/// Full kinematic state of the vehicle at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    /// Position, meters.
    pub p: Vector3<f64>,
    /// Velocity, m/s.
    pub v: Vector3<f64>,
    /// Roll angle, radians in [-pi, pi].
    pub phi: f64,
    /// Pitch angle, radians in [-pi, pi].
    pub theta: f64,
    /// Simulation time the state was sampled at, seconds.
    pub t: f64,
}

impl UavState {
    pub fn at_rest(p: Vector3<f64>, t: f64) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            phi: 0.0,
            theta: 0.0,
            t,
        }
    }

    pub fn to_vec(&self) -> StateVec {
        StateVec::from_iterator(
            self.p
                .iter()
                .chain(self.v.iter())
                .copied()
                .chain([self.phi, self.theta]),
        )
    }

    pub fn from_vec(x: &StateVec, t: f64) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            phi: x[6],
            theta: x[7],
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|c| c.is_finite())
            && self.v.iter().all(|c| c.is_finite())
            && self.phi.is_finite()
            && self.theta.is_finite()
            && self.t.is_finite()
    }
}

/// Thrust / roll-reference / pitch-reference triple produced by a controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    /// Mass-normalized thrust magnitude, m/s².
    pub thrust: f64,
    /// Commanded roll, radians.
    pub phi_ref: f64,
    /// Commanded pitch, radians.
    pub theta_ref: f64,
    /// Creation timestamp on the producing side, seconds.
    pub t_created: f64,
    /// Monotone sequence number, assigned in creation order.
    pub seq: u32,
    /// Sequence number of the state the command was computed from.
    pub state_seq: u32,
}

impl ControlCommand {
    pub fn hover(g: f64, t: f64) -> Self {
        Self {
            thrust: g,
            phi_ref: 0.0,
            theta_ref: 0.0,
            t_created: t,
            seq: 0,
            state_seq: 0,
        }
    }

    pub fn from_input(u: &InputVec, t_created: f64, seq: u32, state_seq: u32) -> Self {
        Self {
            thrust: u[0],
            phi_ref: u[1],
            theta_ref: u[2],
            t_created,
            seq,
            state_seq,
        }
    }

    pub fn input(&self) -> InputVec {
        Vector3::new(self.thrust, self.phi_ref, self.theta_ref)
    }
}

/// Physical parameters of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Linear damping coefficients per axis, 1/s.
    pub damping: Vector3<f64>,
    /// Gravitational acceleration, m/s².
    pub g: f64,
    /// Roll first-order gain.
    pub k_phi: f64,
    /// Pitch first-order gain.
    pub k_theta: f64,
    /// Roll time constant, seconds.
    pub tau_phi: f64,
    /// Pitch time constant, seconds.
    pub tau_theta: f64,
    /// Command saturation bound per channel: thrust deviation from hover,
    /// roll, pitch.
    pub u_th: Vector3<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            damping: Vector3::new(0.1, 0.1, 0.2),
            g: 9.81,
            k_phi: 1.0,
            k_theta: 1.0,
            tau_phi: 0.15,
            tau_theta: 0.15,
            u_th: Vector3::new(0.5 * 9.81, 0.35, 0.35),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.tau_phi > 0.0 && self.tau_theta > 0.0) {
            return Err(DynamicsError::InvalidParams(
                "attitude time constants must be positive".into(),
            ));
        }
        if self.damping.iter().any(|a| *a < 0.0) {
            return Err(DynamicsError::InvalidParams(
                "damping coefficients must be non-negative".into(),
            ));
        }
        if self.u_th.iter().any(|b| *b <= 0.0) {
            return Err(DynamicsError::InvalidParams(
                "saturation bounds must be positive componentwise".into(),
            ));
        }
        Ok(())
    }
}

/// Wraps an angle to [-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if (-std::f64::consts::PI..=std::f64::consts::PI).contains(&a) {
        return a;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w < -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

/// Continuous-time state derivative over plain vectors.
///
/// The thrust vector is rotated into the world frame by the roll/pitch
/// rotation (yaw fixed at zero), gravity and per-axis linear damping are
/// applied, and roll/pitch follow independent first-order responses toward
/// their references.
pub fn derivative_vec(x: &StateVec, u: &InputVec, params: &ModelParams) -> StateVec {
    let (thrust, phi_ref, theta_ref) = (u[0], u[1], u[2]);
    let (phi, theta) = (x[6], x[7]);
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();

    let mut dx = StateVec::zeros();
    // dp = v
    dx[0] = x[3];
    dx[1] = x[4];
    dx[2] = x[5];
    // dv = R(theta, phi) [0,0,T] + [0,0,-g] - diag(A) v
    dx[3] = thrust * st * cp - params.damping[0] * x[3];
    dx[4] = -thrust * sp - params.damping[1] * x[4];
    dx[5] = thrust * ct * cp - params.g - params.damping[2] * x[5];
    // first-order attitude response
    dx[6] = (params.k_phi * phi_ref - phi) / params.tau_phi;
    dx[7] = (params.k_theta * theta_ref - theta) / params.tau_theta;
    dx
}

/// State derivative of the model. Non-finite inputs are a contract
/// violation and abort.
pub fn derivative(s: &UavState, u: &ControlCommand, params: &ModelParams) -> StateVec {
    assert!(s.is_finite(), "non-finite state passed to derivative");
    let uv = u.input();
    assert!(
        uv.iter().all(|c| c.is_finite()),
        "non-finite command passed to derivative"
    );
    derivative_vec(&s.to_vec(), &uv, params)
}

/// Jacobians of [`derivative_vec`] with respect to state and input.
pub fn derivative_jacobians(
    x: &StateVec,
    u: &InputVec,
    params: &ModelParams,
) -> (StateJacobian, InputJacobian) {
    let thrust = u[0];
    let (phi, theta) = (x[6], x[7]);
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();

    let mut a = StateJacobian::zeros();
    // dp/dv
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    // dv/dv
    a[(3, 3)] = -params.damping[0];
    a[(4, 4)] = -params.damping[1];
    a[(5, 5)] = -params.damping[2];
    // dv/dphi
    a[(3, 6)] = -thrust * st * sp;
    a[(4, 6)] = -thrust * cp;
    a[(5, 6)] = -thrust * ct * sp;
    // dv/dtheta
    a[(3, 7)] = thrust * ct * cp;
    a[(5, 7)] = -thrust * st * cp;
    // attitude rows
    a[(6, 6)] = -1.0 / params.tau_phi;
    a[(7, 7)] = -1.0 / params.tau_theta;

    let mut b = InputJacobian::zeros();
    // dv/dT
    b[(3, 0)] = st * cp;
    b[(4, 0)] = -sp;
    b[(5, 0)] = ct * cp;
    // attitude references
    b[(6, 1)] = params.k_phi / params.tau_phi;
    b[(7, 2)] = params.k_theta / params.tau_theta;
    (a, b)
}

/// One classical RK4 step over plain vectors, no wrapping.
pub fn rk4_vec(x: &StateVec, u: &InputVec, dt: f64, params: &ModelParams) -> StateVec {
    let k1 = derivative_vec(x, u, params);
    let k2 = derivative_vec(&(x + k1 * (dt / 2.0)), u, params);
    let k3 = derivative_vec(&(x + k2 * (dt / 2.0)), u, params);
    let k4 = derivative_vec(&(x + k3 * dt), u, params);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// RK4 step with the step transition Jacobians chained alongside,
/// for the adjoint sweep of the optimizer.
pub fn rk4_vec_with_jacobians(
    x: &StateVec,
    u: &InputVec,
    dt: f64,
    params: &ModelParams,
) -> (StateVec, StateJacobian, InputJacobian) {
    let eye = StateJacobian::identity();

    let k1 = derivative_vec(x, u, params);
    let (a1, b1) = derivative_jacobians(x, u, params);
    let dk1_dx = a1;
    let dk1_du = b1;

    let x2 = x + k1 * (dt / 2.0);
    let k2 = derivative_vec(&x2, u, params);
    let (a2, b2) = derivative_jacobians(&x2, u, params);
    let dk2_dx = a2 * (eye + dk1_dx * (dt / 2.0));
    let dk2_du = a2 * (dk1_du * (dt / 2.0)) + b2;

    let x3 = x + k2 * (dt / 2.0);
    let k3 = derivative_vec(&x3, u, params);
    let (a3, b3) = derivative_jacobians(&x3, u, params);
    let dk3_dx = a3 * (eye + dk2_dx * (dt / 2.0));
    let dk3_du = a3 * (dk2_du * (dt / 2.0)) + b3;

    let x4 = x + k3 * dt;
    let k4 = derivative_vec(&x4, u, params);
    let (a4, b4) = derivative_jacobians(&x4, u, params);
    let dk4_dx = a4 * (eye + dk3_dx * dt);
    let dk4_du = a4 * (dk3_du * dt) + b4;

    let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let phi = eye + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * (dt / 6.0);
    let gamma = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * (dt / 6.0);
    (x_next, phi, gamma)
}

/// Advances the state by `dt` with fixed-step RK4, subdividing into inner
/// substeps of at most [`INNER_DT`]. Angles are wrapped to [-pi, pi] and the
/// timestamp advanced by `dt`.
pub fn step(
    s: &UavState,
    u: &ControlCommand,
    dt: f64,
    params: &ModelParams,
) -> Result<UavState, DynamicsError> {
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositiveDt(dt));
    }
    if dt > MAX_STEP_DT {
        return Err(DynamicsError::DtTooLarge(dt));
    }
    assert!(s.is_finite(), "non-finite state passed to step");
    let uv = u.input();
    assert!(
        uv.iter().all(|c| c.is_finite()),
        "non-finite command passed to step"
    );

    let n_sub = (dt / INNER_DT).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;
    let mut x = s.to_vec();
    for _ in 0..n_sub {
        x = rk4_vec(&x, &uv, h, params);
    }
    x[6] = wrap_angle(x[6]);
    x[7] = wrap_angle(x[7]);
    Ok(UavState::from_vec(&x, s.t + dt))
}

/// Clamps a raw command triple into the saturation box of Eq-style
/// symmetric bounds. The thrust channel clamps the deviation from hover
/// thrust and re-adds it, so thrust stays in `[hover - u_th, hover + u_th]`.
pub fn saturate(u_raw: &InputVec, u_th: &Vector3<f64>, hover_thrust: f64) -> InputVec {
    Vector3::new(
        hover_thrust + (u_raw[0] - hover_thrust).clamp(-u_th[0], u_th[0]),
        u_raw[1].clamp(-u_th[1], u_th[1]),
        u_raw[2].clamp(-u_th[2], u_th[2]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params_no_damping() -> ModelParams {
        ModelParams {
            damping: Vector3::zeros(),
            ..ModelParams::default()
        }
    }

    #[test]
    fn hover_thrust_cancels_gravity() {
        let p = params_no_damping();
        let s = UavState::at_rest(Vector3::zeros(), 0.0);
        let u = ControlCommand::hover(p.g, 0.0);
        let dx = derivative(&s, &u, &p);
        for i in 3..6 {
            assert_abs_diff_eq!(dx[i], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn attitude_steady_state_has_zero_rate() {
        let p = ModelParams {
            k_phi: 1.3,
            ..ModelParams::default()
        };
        let phi_ref = 0.2;
        let s = UavState {
            phi: p.k_phi * phi_ref,
            ..UavState::at_rest(Vector3::zeros(), 0.0)
        };
        let u = ControlCommand {
            phi_ref,
            ..ControlCommand::hover(p.g, 0.0)
        };
        let dx = derivative(&s, &u, &p);
        assert_abs_diff_eq!(dx[6], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn damping_term_only() {
        // v = [1,0,0], A_x = 0.1, T = g, level attitude: vdot = [-0.1, 0, 0].
        let p = ModelParams {
            damping: Vector3::new(0.1, 0.0, 0.0),
            ..ModelParams::default()
        };
        let s = UavState {
            v: Vector3::new(1.0, 0.0, 0.0),
            ..UavState::at_rest(Vector3::zeros(), 0.0)
        };
        let u = ControlCommand::hover(p.g, 0.0);
        let dx = derivative(&s, &u, &p);
        assert_abs_diff_eq!(dx[3], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(dx[4], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dx[5], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = params_no_damping();
        let s = UavState::at_rest(Vector3::new(1.0, 2.0, 3.0), 0.0);
        let u = ControlCommand::hover(p.g, 0.0);
        let s1 = step(&s, &u, 0.02, &p).unwrap();
        assert_abs_diff_eq!((s1.p - s.p).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.v.norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.t, 0.02);
    }

    #[test]
    fn integrator_self_convergence() {
        let p = ModelParams::default();
        let s = UavState {
            v: Vector3::new(0.5, -0.2, 0.1),
            phi: 0.05,
            theta: -0.03,
            ..UavState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0)
        };
        let u = ControlCommand {
            thrust: p.g + 0.5,
            phi_ref: 0.1,
            theta_ref: -0.05,
            ..ControlCommand::hover(p.g, 0.0)
        };
        let dt = 0.005;
        let coarse = rk4_vec(&s.to_vec(), &u.input(), dt, &p);
        let mut fine = s.to_vec();
        for _ in 0..10 {
            fine = rk4_vec(&fine, &u.input(), dt / 10.0, &p);
        }
        for i in 0..STATE_DIM {
            assert!(
                (coarse[i] - fine[i]).abs() < 1e-6,
                "component {i}: {} vs {}",
                coarse[i],
                fine[i]
            );
        }
    }

    #[test]
    fn step_rejects_bad_dt() {
        let p = ModelParams::default();
        let s = UavState::at_rest(Vector3::zeros(), 0.0);
        let u = ControlCommand::hover(p.g, 0.0);
        assert!(step(&s, &u, 0.0, &p).is_err());
        assert!(step(&s, &u, -0.01, &p).is_err());
        assert!(step(&s, &u, 0.1, &p).is_err());
    }

    #[test]
    fn step_is_deterministic() {
        let p = ModelParams::default();
        let s = UavState {
            v: Vector3::new(0.3, 0.1, -0.2),
            phi: 0.02,
            ..UavState::at_rest(Vector3::new(1.0, -1.0, 0.5), 2.0)
        };
        let u = ControlCommand {
            thrust: p.g + 1.0,
            phi_ref: 0.05,
            theta_ref: 0.1,
            ..ControlCommand::hover(p.g, 2.0)
        };
        let a = step(&s, &u, 0.01, &p).unwrap();
        let b = step(&s, &u, 0.01, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturate_clamps_and_passes_through() {
        let u_th = Vector3::new(2.0, 0.35, 0.35);
        let g = 9.81;
        // inside the box: unchanged
        let inside = Vector3::new(g + 1.0, 0.1, -0.2);
        assert_eq!(saturate(&inside, &u_th, g), inside);
        // upper clamp
        let hi = Vector3::new(g + 4.0, 0.7, 0.0);
        let s = saturate(&hi, &u_th, g);
        assert_abs_diff_eq!(s[0], g + 2.0);
        assert_abs_diff_eq!(s[1], 0.35);
        // lower clamp
        let lo = Vector3::new(g - 6.0, 0.0, -1.05);
        let s = saturate(&lo, &u_th, g);
        assert_abs_diff_eq!(s[0], g - 2.0);
        assert_abs_diff_eq!(s[2], -0.35);
    }

    #[test]
    fn saturate_idempotent() {
        let u_th = Vector3::new(2.0, 0.35, 0.35);
        let g = 9.81;
        let raw = Vector3::new(25.0, -3.0, 0.2);
        let once = saturate(&raw, &u_th, g);
        let twice = saturate(&once, &u_th, g);
        assert_eq!(once, twice);
        assert!((once[0] - g).abs() <= u_th[0]);
        assert!(once[1].abs() <= u_th[1]);
        assert!(once[2].abs() <= u_th[2]);
    }

    #[test]
    fn velocity_norm_dissipates_without_thrust() {
        let p = ModelParams {
            damping: Vector3::new(0.3, 0.2, 0.4),
            g: 0.0,
            ..ModelParams::default()
        };
        let mut s = UavState {
            v: Vector3::new(1.0, -2.0, 0.5),
            ..UavState::at_rest(Vector3::zeros(), 0.0)
        };
        let u = ControlCommand {
            thrust: 0.0,
            ..ControlCommand::hover(0.0, 0.0)
        };
        let mut prev = s.v.norm();
        for _ in 0..200 {
            s = step(&s, &u, 0.01, &p).unwrap();
            let n = s.v.norm();
            assert!(n <= prev + 1e-12);
            prev = n;
        }
    }

    #[test]
    fn attitude_first_order_response() {
        let p = ModelParams::default();
        let phi_ref = 0.3;
        let mut s = UavState::at_rest(Vector3::zeros(), 0.0);
        let u = ControlCommand {
            phi_ref,
            ..ControlCommand::hover(p.g, 0.0)
        };
        let dt = 0.001;
        let n = (p.tau_phi / dt).round() as usize;
        let mut prev_phi = 0.0;
        for _ in 0..n {
            s = step(&s, &u, dt, &p).unwrap();
            assert!(s.phi >= prev_phi - 1e-12, "monotone rise");
            prev_phi = s.phi;
        }
        let expected = p.k_phi * phi_ref * (1.0 - (-1.0f64).exp());
        assert!((s.phi - expected).abs() < 1e-3);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let p = ModelParams::default();
        let x = StateVec::from_column_slice(&[0.3, -0.2, 1.1, 0.4, -0.1, 0.2, 0.08, -0.05]);
        let u = Vector3::new(10.2, 0.1, -0.07);
        let (a, b) = derivative_jacobians(&x, &u, &p);
        let h = 1e-7;
        for j in 0..STATE_DIM {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let col = (derivative_vec(&xp, &u, &p) - derivative_vec(&xm, &u, &p)) / (2.0 * h);
            for i in 0..STATE_DIM {
                assert!((a[(i, j)] - col[i]).abs() < 1e-6, "A[{i},{j}]");
            }
        }
        for j in 0..INPUT_DIM {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let col = (derivative_vec(&x, &up, &p) - derivative_vec(&x, &um, &p)) / (2.0 * h);
            for i in 0..STATE_DIM {
                assert!((b[(i, j)] - col[i]).abs() < 1e-6, "B[{i},{j}]");
            }
        }
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_abs_diff_eq!(wrap_angle(0.0), 0.0);
        // odd multiples of pi land on the boundary; either sign is a valid wrap
        assert_abs_diff_eq!(wrap_angle(3.0 * PI).abs(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-3.0 * PI).abs(), PI, epsilon = 1e-12);
        for k in -20..20 {
            let a = 0.37 * k as f64;
            let w = wrap_angle(a);
            assert!((-PI..=PI).contains(&w));
            assert_abs_diff_eq!(w.sin(), a.sin(), epsilon = 1e-12);
            assert_abs_diff_eq!(w.cos(), a.cos(), epsilon = 1e-12);
        }
    }
}
