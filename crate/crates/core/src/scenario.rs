//! Experiment orchestration: the closed-loop event loop wiring the plant,
//! the simulated links, the edge controller, the onboard fallback, and
//! the switching logic; plus output writing.
//!
//! Simulation mode is strictly single-threaded and event-ordered over one
//! global clock. Takeoff is scripted under the onboard controller before
//! the mission clock starts.

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::channel::{sinr_at, ChannelError, SimLink};
use crate::config::{ConfigError, ScenarioConfig};
use crate::dynamics::{self, ControlCommand, DynamicsError, UavState};
use crate::metrics::{
    export_csv, export_packet_log, ArrivalRecord, EstimatorRecord, MetricsError, MetricsLog,
    MetricsRow,
};
use crate::mpc::{estimate_uplink_state, MpcError, MpcSolver, SolverStatus};
use crate::pid::{fallback_setpoint, PidController, PidError};
use crate::switch::{ControlMode, ErrorEstimator, KpiSample, SwitchError, SwitchState};

/// Duration of the scripted takeoff ramp, seconds.
pub const TAKEOFF_S: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Pid(#[from] PidError),
    #[error(transparent)]
    Switch(#[from] SwitchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Runs one simulation-mode scenario to completion and returns the full
/// metrics log.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsLog, ScenarioError> {
    cfg.validate()?;
    let params = cfg.model.to_params();
    let mpc_cfg = cfg.mpc.to_config(&params);
    let t_exec = mpc_cfg.t_exec();
    let tick = cfg.tick;

    let mut solver = MpcSolver::new(mpc_cfg, params)?;
    let mut pid = PidController::new(
        cfg.pid.gains(),
        params.u_th,
        cfg.pid.integral_clamp,
        params.g,
    );

    let start = cfg.trajectory.start_position();
    let home = fallback_setpoint(cfg.pid.home.map(Vector3::from), start);

    // scripted takeoff: ramp from the ground under the onboard controller
    let ground = Vector3::new(start[0], start[1], 0.0);
    let mut state = UavState::at_rest(ground, -TAKEOFF_S);
    let n_pre = (TAKEOFF_S / tick).round() as usize;
    for i in 0..n_pre {
        let frac = ((i + 1) as f64 * tick / TAKEOFF_S).min(1.0);
        let sp = ground + (start - ground) * frac;
        let cmd = pid.compute(sp, &state, tick)?;
        state = dynamics::step(&state, &cmd, tick, &params)?;
    }
    pid.reset();

    let mut uplink: SimLink<UavState> =
        SimLink::new(cfg.channel.uplink.clone(), cfg.seed.wrapping_add(0x5EED_0001))?;
    let mut downlink: SimLink<ControlCommand> =
        SimLink::new(cfg.channel.downlink.clone(), cfg.seed.wrapping_add(0x5EED_0002))?;

    let mut switch_state = SwitchState::new(cfg.switch.window, cfg.switch.debounce);
    let mut estimator = ErrorEstimator::new(t_exec);
    let forced = cfg.switch.forced_mode()?;

    let mut log = MetricsLog {
        t_exec,
        tick,
        ..MetricsLog::default()
    };

    let ticks_per_exec = (t_exec / tick).round().max(1.0) as usize;
    let n_ticks = (cfg.duration / tick).round() as usize;

    let mut state_seq: u32 = 0;
    let mut edge_last_state_seq: u32 = 0;
    let mut edge_last_cmd = ControlCommand::hover(params.g, 0.0);
    let mut held_cmd = ControlCommand::hover(params.g, 0.0);
    let mut last_cmd_seq: u32 = 0;
    let mut last_arrival_speed: f64 = 0.0;
    let mut k_cum: u32 = 0;
    let mut last_estimate: Option<crate::switch::ErrorEstimate> = None;
    let mut prev_mode = ControlMode::Offboard;

    for n in 0..n_ticks {
        let t = n as f64 * tick;
        let sinr_now = sinr_at(&cfg.channel.sinr, t);

        // vehicle samples and uplinks its state every tick
        state_seq += 1;
        let mut stamped = state;
        stamped.t = t;
        uplink.send(stamped, state_seq, t, sinr_now);

        // edge activation at the controller rate
        if n % ticks_per_exec == 0 {
            let arrivals = uplink.poll_deliveries(t)?;
            let newest = arrivals
                .into_iter()
                .max_by_key(|d| d.seq)
                .filter(|d| d.seq > edge_last_state_seq);
            if let Some(d) = newest {
                edge_last_state_seq = d.seq;
                let delayed = d.payload;
                // age of the state when the edge application consumes it
                let l_u = t - delayed.t;
                let est = estimate_uplink_state(&delayed, &edge_last_cmd, l_u, &params)?;
                log.estimator_records.push(EstimatorRecord {
                    t,
                    err_compensated: (est.p - state.p).norm(),
                    err_uncompensated: (delayed.p - state.p).norm(),
                });
                let refs = cfg.trajectory.reference_horizon(
                    t,
                    solver.cfg.dt_mpc,
                    solver.cfg.n,
                    params.g,
                );
                let (cmd, _, report) = solver.solve(&est, &refs, &edge_last_cmd, t, d.seq);
                log.solver.solves += 1;
                log.solver.total_iterations += report.iterations as u64;
                log.solver.max_iterations = log.solver.max_iterations.max(report.iterations);
                if report.status == SolverStatus::Failed {
                    log.solver.failures += 1;
                } else {
                    edge_last_cmd = cmd;
                }
                downlink.send(cmd, cmd.seq, t, sinr_now);
            }
        }

        // vehicle ingests delivered commands, in delivery order
        for d in downlink.poll_deliveries(t)? {
            let cmd = d.payload;
            let k = cmd.seq.saturating_sub(last_cmd_seq + 1);
            k_cum += k;
            let speed_now = state.v.norm();
            let sample = KpiSample {
                t_arrival: d.t_deliver,
                t_created: cmd.t_created,
                k,
                v_prev: last_arrival_speed,
                sinr: sinr_at(&cfg.channel.sinr, d.t_deliver),
            };
            if let Some(est) = estimator.ingest(&sample)? {
                switch_state.update_window(&est);
                log.estimates.push(est);
                last_estimate = Some(est);
            }
            log.arrivals.push(ArrivalRecord {
                t_arrival: d.t_deliver,
                t_created: cmd.t_created,
                seq: cmd.seq,
                speed: speed_now,
            });
            last_cmd_seq = cmd.seq;
            last_arrival_speed = speed_now;
            held_cmd = cmd;
        }

        // two-level switch, evaluated every tick
        let decision = switch_state.decide(sinr_now, cfg.switch.e_th, cfg.switch.s_th);
        let mode = forced.unwrap_or(decision.mode);
        if mode == ControlMode::Onboard && prev_mode == ControlMode::Offboard {
            pid.reset();
        }
        prev_mode = mode;

        // apply: zero-order hold on the edge command, or the onboard PID
        // toward the fallback setpoint
        let applied = match mode {
            ControlMode::Offboard => held_cmd,
            ControlMode::Onboard => pid.compute(home, &state, tick)?,
        };

        let reference = cfg.trajectory.reference_at(t, params.g);
        let (e_c, e_d, l_c, l_d) = last_estimate
            .map(|e| (e.e_c, e.e_d, e.l_c, e.l_d))
            .unwrap_or((0.0, 0.0, 0.0, 0.0));
        log.rows.push(MetricsRow {
            t,
            p: state.p,
            p_ref: Vector3::new(reference.x_d[0], reference.x_d[1], reference.x_d[2]),
            v: state.v,
            mode,
            windowed_error: decision.windowed_error,
            e_c,
            e_d,
            l_c,
            l_d,
            sinr: sinr_now,
            k_cumulative: k_cum,
            cmd_seq: held_cmd.seq,
        });
        log.applied
            .push((applied.thrust, applied.phi_ref, applied.theta_ref));

        state = dynamics::step(&state, &applied, tick, &params)?;
    }

    Ok(log)
}

/// Writes `metrics.csv` and `packets.csv` under the output directory.
pub fn write_outputs(log: &MetricsLog, dir: &Path) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    export_csv(log, &dir.join("metrics.csv"))?;
    export_packet_log(log, &dir.join("packets.csv"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkConfig;

    fn quick_cfg() -> ScenarioConfig {
        ScenarioConfig {
            duration: 5.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn nominal_channel_stays_offboard() {
        let log = run_scenario(&quick_cfg()).unwrap();
        assert_eq!(log.rows.len(), 500);
        assert!(log
            .rows
            .iter()
            .all(|r| r.mode == ControlMode::Offboard));
        assert_eq!(log.summary().switch_count, 0);
    }

    #[test]
    fn row_count_matches_duration() {
        let cfg = ScenarioConfig {
            duration: 2.5,
            ..quick_cfg()
        };
        let log = run_scenario(&cfg).unwrap();
        let expected = (cfg.duration / cfg.tick).round() as usize;
        assert!((log.rows.len() as i64 - expected as i64).abs() <= 1);
        // rows strictly time-ordered
        for w in log.rows.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn tracking_settles_on_circle() {
        let cfg = ScenarioConfig {
            duration: 20.0,
            ..quick_cfg()
        };
        let log = run_scenario(&cfg).unwrap();
        // after a few seconds the tracking error stays small
        let tail: Vec<_> = log.rows.iter().filter(|r| r.t > 8.0).collect();
        let max_err = tail
            .iter()
            .map(|r| (r.p - r.p_ref).norm())
            .fold(0.0f64, f64::max);
        assert!(max_err < 0.25, "tail tracking error {max_err}");
    }

    #[test]
    fn forced_offboard_ignores_gates() {
        let mut cfg = quick_cfg();
        cfg.duration = 3.0;
        // SINR held below threshold the whole run
        cfg.channel.sinr = crate::channel::SinrTrace::constant(2.0);
        cfg.switch.force_mode = Some("offboard".into());
        let log = run_scenario(&cfg).unwrap();
        assert!(log.rows.iter().all(|r| r.mode == ControlMode::Offboard));
    }

    #[test]
    fn dead_downlink_no_arrivals() {
        let mut cfg = quick_cfg();
        cfg.duration = 3.0;
        cfg.channel.downlink = LinkConfig {
            drop_prob: 1.0,
            ..LinkConfig::default()
        };
        let log = run_scenario(&cfg).unwrap();
        assert!(log.arrivals.is_empty());
        // error estimator never fires; held command stays the initial hover
        assert!(log.rows.iter().all(|r| r.cmd_seq == 0));
    }
}
