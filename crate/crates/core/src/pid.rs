//! Onboard fallback: saturated PID position controller and the
//! return-to-home fallback setpoint.
//!
//! The PID acts per world axis on position error, with the derivative term
//! taken on the measured velocity. Desired world accelerations are mapped
//! to thrust/roll/pitch references by small-angle inversion of the model,
//! then clamped by the saturation boundary. Integrals only accumulate on
//! axes whose output channel is unsaturated.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{saturate, ControlCommand, UavState};

#[derive(Debug, Error)]
pub enum PidError {
    #[error("controller step dt must be positive, got {0}")]
    NonPositiveDt(f64),
}

/// Per-axis PID gain vectors (x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: Vector3<f64>,
    pub ki: Vector3<f64>,
    pub kd: Vector3<f64>,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: Vector3::new(4.0, 4.0, 8.0),
            ki: Vector3::new(0.05, 0.05, 0.1),
            kd: Vector3::new(6.0, 6.0, 6.0),
        }
    }
}

/// Internal controller memory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    /// Accumulated error integral per axis, m*s.
    pub integral: Vector3<f64>,
    /// Last position error per axis, m.
    pub prev_error: Vector3<f64>,
    pub initialized: bool,
}

/// Position PID with saturation and conditional anti-windup.
#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: PidGains,
    /// Saturation bound per command channel (thrust deviation, roll, pitch).
    pub u_th: Vector3<f64>,
    /// Clamp on |integral| per axis, m*s.
    pub integral_clamp: f64,
    /// Hover thrust, m/s².
    pub g: f64,
    state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains, u_th: Vector3<f64>, integral_clamp: f64, g: f64) -> Self {
        Self {
            gains,
            u_th,
            integral_clamp,
            g,
            state: PidState::default(),
        }
    }

    pub fn state(&self) -> &PidState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = PidState::default();
    }

    /// One controller step toward `setpoint`.
    ///
    /// Returned commands carry `seq = 0` / `state_seq = 0`; the onboard
    /// loop applies them locally, they are never transmitted.
    pub fn compute(
        &mut self,
        setpoint: Vector3<f64>,
        meas: &UavState,
        dt: f64,
    ) -> Result<ControlCommand, PidError> {
        if dt <= 0.0 {
            return Err(PidError::NonPositiveDt(dt));
        }
        let e = setpoint - meas.p;
        let g = &self.gains;
        // derivative on measurement: -v instead of de/dt
        let accel = Vector3::new(
            g.kp[0] * e[0] + g.ki[0] * self.state.integral[0] - g.kd[0] * meas.v[0],
            g.kp[1] * e[1] + g.ki[1] * self.state.integral[1] - g.kd[1] * meas.v[1],
            g.kp[2] * e[2] + g.ki[2] * self.state.integral[2] - g.kd[2] * meas.v[2],
        );

        // small-angle inversion: a_x = g*theta, a_y = -g*phi, a_z = T - g
        let raw = Vector3::new(self.g + accel[2], -accel[1] / self.g, accel[0] / self.g);
        let sat = saturate(&raw, &self.u_th, self.g);

        // conditional anti-windup: command channel per axis is
        // x -> pitch, y -> roll, z -> thrust
        let unsaturated = [
            (raw[2] - sat[2]).abs() == 0.0,
            (raw[1] - sat[1]).abs() == 0.0,
            (raw[0] - sat[0]).abs() == 0.0,
        ];
        for axis in 0..3 {
            if unsaturated[axis] {
                self.state.integral[axis] = (self.state.integral[axis] + e[axis] * dt)
                    .clamp(-self.integral_clamp, self.integral_clamp);
            }
        }
        self.state.prev_error = e;
        self.state.initialized = true;

        Ok(ControlCommand {
            thrust: sat[0],
            phi_ref: sat[1],
            theta_ref: sat[2],
            t_created: meas.t,
            seq: 0,
            state_seq: 0,
        })
    }
}

/// The fallback planner's setpoint: the configured home position, or the
/// takeoff position when no home is set.
pub fn fallback_setpoint(home: Option<Vector3<f64>>, takeoff: Vector3<f64>) -> Vector3<f64> {
    home.unwrap_or(takeoff)
}
