//! Onboard two-level switching strategy: latency-based position-error
//! estimation from downlink KPIs, a sliding-window average over the
//! combined estimate, and the error-threshold gate in series with the
//! SINR gate. Both gates must pass for offboard control.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SwitchError {
    #[error("arrival time {t_arr} precedes previous arrival {t_prev} (clock contract violation)")]
    TimeRegression { t_arr: f64, t_prev: f64 },
    #[error("arrival time {t_arr} precedes creation time {t_created}")]
    ArrivalBeforeCreation { t_arr: f64, t_created: f64 },
}

/// Control authority selected by the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    /// Edge-side controller commands the vehicle.
    Offboard,
    /// Onboard fallback controller commands the vehicle.
    Onboard,
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlMode::Offboard => write!(f, "offboard"),
            ControlMode::Onboard => write!(f, "onboard"),
        }
    }
}

/// Per-command communication measurements taken at arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpiSample {
    /// Command arrival time t'_i, seconds.
    pub t_arrival: f64,
    /// Command creation time t_i, seconds.
    pub t_created: f64,
    /// Dropped-packet count since the last valid command.
    pub k: u32,
    /// Vehicle speed at the last valid command, m/s.
    pub v_prev: f64,
    /// Signal-to-interference-plus-noise ratio at arrival, dB.
    pub sinr: f64,
}

/// The two latency measurements and the error estimates derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    /// Consecutive-arrival error estimate, m.
    pub e_c: f64,
    /// Creation-to-arrival error estimate, m.
    pub e_d: f64,
    /// Combined estimate (e_c + e_d) / 2, m.
    pub e_mean: f64,
    /// Inter-arrival latency of consecutive delivered commands, s.
    pub l_c: f64,
    /// Creation-to-arrival latency including the drop penalty, s.
    pub l_d: f64,
}

/// Inter-arrival time of two consecutive delivered commands.
pub fn latency_c(t_arr_i: f64, t_arr_prev_valid: f64) -> Result<f64, SwitchError> {
    if t_arr_i < t_arr_prev_valid {
        return Err(SwitchError::TimeRegression {
            t_arr: t_arr_i,
            t_prev: t_arr_prev_valid,
        });
    }
    Ok(t_arr_i - t_arr_prev_valid)
}

/// Creation-to-arrival latency of the valid command, charged one execution
/// period per dropped packet.
pub fn latency_d(t_arr: f64, t_created: f64, k: u32, t_exec: f64) -> Result<f64, SwitchError> {
    if t_arr < t_created {
        return Err(SwitchError::ArrivalBeforeCreation { t_arr, t_created });
    }
    Ok(t_arr - t_created + t_exec * k as f64)
}

/// Converts the two latencies into position-error estimates scaled by the
/// speed at the last valid command.
pub fn error_from_latencies(v_prev: f64, l_c: f64, l_d: f64) -> ErrorEstimate {
    let e_c = v_prev * l_c;
    let e_d = v_prev * l_d;
    ErrorEstimate {
        e_c,
        e_d,
        e_mean: (e_c + e_d) / 2.0,
        l_c,
        l_d,
    }
}

/// Stateful downlink error estimator; remembers the previous valid
/// arrival so consecutive-arrival latency can be formed.
#[derive(Debug, Clone)]
pub struct ErrorEstimator {
    t_exec: f64,
    last_arrival: Option<f64>,
}

impl ErrorEstimator {
    pub fn new(t_exec: f64) -> Self {
        Self {
            t_exec,
            last_arrival: None,
        }
    }

    /// Ingests one valid command arrival. The first arrival has no
    /// consecutive-arrival baseline and produces no estimate.
    pub fn ingest(&mut self, sample: &KpiSample) -> Result<Option<ErrorEstimate>, SwitchError> {
        let prev = self.last_arrival;
        // the latency_d precondition is checked even when no estimate is
        // produced, so a bad first sample still surfaces
        let l_d = latency_d(sample.t_arrival, sample.t_created, sample.k, self.t_exec)?;
        let out = match prev {
            Some(t_prev) => {
                let l_c = latency_c(sample.t_arrival, t_prev)?;
                Some(error_from_latencies(sample.v_prev, l_c, l_d))
            }
            None => None,
        };
        self.last_arrival = Some(sample.t_arrival);
        Ok(out)
    }
}

/// Decision snapshot exported per tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchDecision {
    pub mode: ControlMode,
    pub windowed_error: f64,
    pub sinr: f64,
    pub error_gate: bool,
    pub sinr_gate: bool,
}

/// Two-level switch state: sliding window over the combined error plus the
/// SINR gate debounce counter. Single-writer by contract.
#[derive(Debug, Clone)]
pub struct SwitchState {
    window: VecDeque<f64>,
    capacity: usize,
    windowed_error: f64,
    /// Consecutive below-threshold SINR samples seen so far.
    low_sinr_streak: usize,
    /// SINR samples that must all be below threshold before the gate trips.
    debounce: usize,
    mode: ControlMode,
    error_gate: bool,
    sinr_gate: bool,
}

impl SwitchState {
    pub fn new(window_capacity: usize, debounce: usize) -> Self {
        assert!(window_capacity >= 1, "window capacity must be >= 1");
        assert!(debounce >= 1, "debounce must be >= 1");
        Self {
            window: VecDeque::with_capacity(window_capacity),
            capacity: window_capacity,
            windowed_error: 0.0,
            low_sinr_streak: 0,
            debounce,
            mode: ControlMode::Offboard,
            error_gate: true,
            sinr_gate: true,
        }
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    /// Sliding-window mean of the combined error estimates seen so far.
    /// Before the window fills, the mean of the available samples.
    pub fn windowed_error(&self) -> f64 {
        self.windowed_error
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Pushes one combined error estimate, evicting the oldest beyond
    /// capacity, and recomputes the arithmetic mean.
    pub fn update_window(&mut self, e: &ErrorEstimate) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(e.e_mean);
        // Neumaier-compensated sum: the error gate is a strict threshold
        // comparison, so one-ulp summation drift must not decide it
        let mut sum = 0.0_f64;
        let mut comp = 0.0_f64;
        for &x in &self.window {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        self.windowed_error = (sum + comp) / self.window.len() as f64;
    }

    /// Evaluates both gates against the thresholds and updates the mode.
    ///
    /// The error gate passes while the windowed error is below `e_th`; the
    /// SINR gate fails once `debounce` consecutive samples fall below
    /// `s_th`. Offboard requires both gates to pass (series composition).
    pub fn decide(&mut self, sinr: f64, e_th: f64, s_th: f64) -> SwitchDecision {
        if sinr < s_th {
            self.low_sinr_streak += 1;
        } else {
            self.low_sinr_streak = 0;
        }
        self.error_gate = self.windowed_error < e_th;
        self.sinr_gate = self.low_sinr_streak < self.debounce;
        self.mode = if self.error_gate && self.sinr_gate {
            ControlMode::Offboard
        } else {
            ControlMode::Onboard
        };
        SwitchDecision {
            mode: self.mode,
            windowed_error: self.windowed_error,
            sinr,
            error_gate: self.error_gate,
            sinr_gate: self.sinr_gate,
        }
    }

    /// Forces the SINR gate shut (transport-level channel-down condition).
    pub fn force_channel_down(&mut self) {
        self.low_sinr_streak = self.debounce;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn latency_c_direct_difference() {
        assert_abs_diff_eq!(latency_c(10.05, 10.00).unwrap(), 0.05, epsilon = 1e-12);
        assert_eq!(latency_c(3.0, 3.0).unwrap(), 0.0);
        assert!(latency_c(1.0, 2.0).is_err());
    }

    #[test]
    fn latency_d_drop_penalty() {
        assert_abs_diff_eq!(latency_d(1.02, 1.0, 0, 0.05).unwrap(), 0.02, epsilon = 1e-12);
        // 0.02 + 3 * 0.05 = 0.17
        assert_abs_diff_eq!(latency_d(1.02, 1.0, 3, 0.05).unwrap(), 0.17, epsilon = 1e-12);
        assert_eq!(latency_d(5.0, 5.0, 0, 0.05).unwrap(), 0.0);
        assert!(latency_d(1.0, 2.0, 0, 0.05).is_err());
    }

    #[test]
    fn zero_velocity_zero_error() {
        let e = error_from_latencies(0.0, 0.8, 1.4);
        assert_eq!(e.e_c, 0.0);
        assert_eq!(e.e_d, 0.0);
        assert_eq!(e.e_mean, 0.0);
    }

    #[test]
    fn equal_latency_case() {
        let e = error_from_latencies(1.0, 0.05, 0.05);
        assert_abs_diff_eq!(e.e_mean, 0.05, epsilon = 1e-15);
        assert_eq!(e.e_c, e.e_d);
    }

    #[test]
    fn scale_covariance_in_velocity() {
        let a = error_from_latencies(0.7, 0.06, 0.11);
        let b = error_from_latencies(1.4, 0.06, 0.11);
        assert_eq!(b.e_c, 2.0 * a.e_c);
        assert_eq!(b.e_d, 2.0 * a.e_d);
        assert_eq!(b.e_mean, 2.0 * a.e_mean);
    }

    #[test]
    fn estimator_steady_traffic_equal_estimates() {
        // per-packet downlink delay equal to t_exec, no drops: e_c == e_d
        let t_exec = 0.05;
        let mut est = ErrorEstimator::new(t_exec);
        for i in 0..50u32 {
            let t_created = i as f64 * t_exec;
            let sample = KpiSample {
                t_arrival: t_created + t_exec,
                t_created,
                k: 0,
                v_prev: 0.5,
                sinr: 20.0,
            };
            if let Some(e) = est.ingest(&sample).unwrap() {
                assert!((e.e_c - e.e_d).abs() < 1e-12, "i={i}: {e:?}");
            }
        }
    }

    #[test]
    fn estimator_three_case_ordering() {
        let t_exec = 0.05;
        for (delay, expect) in [
            (2.0 * t_exec, std::cmp::Ordering::Less),
            (0.5 * t_exec, std::cmp::Ordering::Greater),
        ] {
            let mut est = ErrorEstimator::new(t_exec);
            for i in 0..50u32 {
                let t_created = i as f64 * t_exec;
                let sample = KpiSample {
                    t_arrival: t_created + delay,
                    t_created,
                    k: 0,
                    v_prev: 0.5,
                    sinr: 20.0,
                };
                if let Some(e) = est.ingest(&sample).unwrap() {
                    assert_eq!(e.e_c.partial_cmp(&e.e_d).unwrap(), expect, "delay={delay}");
                }
            }
        }
    }

    #[test]
    fn window_mean_of_constants() {
        let mut st = SwitchState::new(50, 3);
        let e = error_from_latencies(1.0, 0.07, 0.07);
        st.update_window(&e);
        assert_abs_diff_eq!(st.windowed_error(), 0.07, epsilon = 1e-15);
        for _ in 0..200 {
            st.update_window(&e);
        }
        assert_abs_diff_eq!(st.windowed_error(), 0.07, epsilon = 1e-12);
        assert_eq!(st.window_len(), 50);
    }

    #[test]
    fn window_mixed_stream_mean() {
        // [0.1 x 25, 0.3 x 25] with W = 50 -> mean 0.2
        let mut st = SwitchState::new(50, 3);
        for _ in 0..25 {
            st.update_window(&error_from_latencies(1.0, 0.1, 0.1));
        }
        for _ in 0..25 {
            st.update_window(&error_from_latencies(1.0, 0.3, 0.3));
        }
        assert_abs_diff_eq!(st.windowed_error(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn decide_default_thresholds() {
        let (e_th, s_th) = (0.15, 6.0);
        // low windowed error, good sinr -> offboard
        let mut st = SwitchState::new(50, 3);
        st.update_window(&error_from_latencies(1.0, 0.10, 0.10));
        let d = st.decide(20.0, e_th, s_th);
        assert_eq!(d.mode, ControlMode::Offboard);
        assert!(d.error_gate && d.sinr_gate);

        // error gate fails
        let mut st = SwitchState::new(50, 3);
        st.update_window(&error_from_latencies(1.0, 0.20, 0.20));
        let d = st.decide(20.0, e_th, s_th);
        assert_eq!(d.mode, ControlMode::Onboard);
        assert!(!d.error_gate);

        // SINR overrides the error switch regardless of its output;
        // the gate trips after the debounce run of low samples
        let mut st = SwitchState::new(50, 1);
        st.update_window(&error_from_latencies(1.0, 0.01, 0.01));
        let d = st.decide(5.0, e_th, s_th);
        assert_eq!(d.mode, ControlMode::Onboard);
        assert!(d.error_gate && !d.sinr_gate);
    }

    #[test]
    fn sinr_debounce_needs_consecutive_lows() {
        let (e_th, s_th) = (0.15, 6.0);
        let mut st = SwitchState::new(50, 3);
        assert_eq!(st.decide(5.0, e_th, s_th).mode, ControlMode::Offboard);
        assert_eq!(st.decide(5.0, e_th, s_th).mode, ControlMode::Offboard);
        assert_eq!(st.decide(5.0, e_th, s_th).mode, ControlMode::Onboard);
        // one good sample resets the streak
        assert_eq!(st.decide(10.0, e_th, s_th).mode, ControlMode::Offboard);
        assert_eq!(st.decide(5.0, e_th, s_th).mode, ControlMode::Offboard);
    }

    #[test]
    fn series_composition_invariant() {
        let (e_th, s_th) = (0.15, 6.0);
        let mut st = SwitchState::new(10, 2);
        let errors = [0.0, 0.05, 0.2, 0.4, 0.1, 0.0, 0.3];
        let sinrs = [20.0, 4.0, 4.0, 20.0, 3.0, 3.0, 3.0];
        for (e, s) in errors.iter().zip(sinrs.iter()) {
            st.update_window(&error_from_latencies(1.0, *e, *e));
            let d = st.decide(*s, e_th, s_th);
            if d.mode == ControlMode::Offboard {
                assert!(d.windowed_error < e_th);
                assert!(d.sinr_gate);
            }
        }
    }

    #[test]
    fn error_gate_is_threshold_function() {
        let (e_th, s_th) = (0.15, 6.0);
        for w in [0.0, 0.05, 0.1499, 0.15, 0.2, 1.0] {
            let mut st = SwitchState::new(1, 3);
            st.update_window(&error_from_latencies(1.0, w, w));
            let d = st.decide(20.0, e_th, s_th);
            assert_eq!(d.mode == ControlMode::Offboard, w < e_th, "w={w}");
        }
    }

    #[test]
    fn chattering_suppressed_by_window() {
        let (e_th, s_th) = (0.15, 6.0);
        let w = 50usize;

        let count_changes = |capacity: usize| -> usize {
            let mut st = SwitchState::new(capacity, 3);
            let mut last = st.mode();
            let mut changes = 0;
            for i in 0..(10 * w) {
                // alternates per sample between 0 and 2 e_th; the window
                // mean pins at e_th, which the strict gate maps onboard
                let e = if i % 2 == 0 { 2.0 * e_th } else { 0.0 };
                st.update_window(&error_from_latencies(1.0, e, e));
                let d = st.decide(20.0, e_th, s_th);
                if d.mode != last {
                    changes += 1;
                    last = d.mode;
                }
            }
            changes
        };

        assert!(count_changes(w) <= 2, "windowed: {}", count_changes(w));
        assert!(count_changes(1) >= 100, "unwindowed: {}", count_changes(1));
    }

    #[test]
    fn channel_down_forces_onboard() {
        let mut st = SwitchState::new(50, 3);
        st.force_channel_down();
        let d = st.decide(20.0, 0.15, 6.0);
        // a good sample right after resets the streak
        assert_eq!(d.mode, ControlMode::Offboard);
        st.force_channel_down();
        let d = st.decide(5.0, 0.15, 6.0);
        assert_eq!(d.mode, ControlMode::Onboard);
    }
}
