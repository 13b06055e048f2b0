//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use edgeswitch::channel::sinr_at;
use edgeswitch::config::{ConfigError, ScenarioConfig};
use edgeswitch::dynamics::{self, ControlCommand, UavState};
use edgeswitch::metrics::{
    self, import_packet_log, ArrivalRecord, MetricsLog, MetricsRow,
};
use edgeswitch::mpc::{estimate_uplink_state, MpcSolver, SolverStatus};
use edgeswitch::pid::{fallback_setpoint, PidController};
use edgeswitch::scenario::{run_scenario, write_outputs};
use edgeswitch::switch::{ControlMode, ErrorEstimator, KpiSample, SwitchState};
use edgeswitch::udp::DatagramEndpoint;
use edgeswitch::wire::WireMsg;

#[derive(Parser)]
#[command(name = "edgeswitch", version, about = "Edge-offloaded UAV control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Transport {
    Sim,
    Udp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Uav,
    Edge,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML configuration.
    Run {
        config: PathBuf,
        /// Output directory for metrics.csv and packets.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "sim")]
        transport: Transport,
        /// Which side this process plays in udp transport.
        #[arg(long, value_enum, default_value = "uav")]
        role: Role,
        /// Peer (uav role) or listen (edge role) address in udp transport.
        #[arg(long)]
        endpoint: Option<String>,
        /// Pin offboard control, disabling the switching logic.
        #[arg(long)]
        no_switch: bool,
    },
    /// Recompute the error-estimate series from a recorded packet log.
    Replay { packet_log: PathBuf },
    /// Print the run summary of a metrics CSV.
    Summary { csv: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<edgeswitch::scenario::ScenarioError> for CliError {
    fn from(e: edgeswitch::scenario::ScenarioError) -> Self {
        match e {
            edgeswitch::scenario::ScenarioError::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            transport,
            role,
            endpoint,
            no_switch,
        } => {
            let mut cfg = ScenarioConfig::load(
                config
                    .to_str()
                    .ok_or_else(|| CliError::Config("non-UTF-8 config path".into()))?,
            )?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if no_switch {
                cfg.switch.force_mode = Some("offboard".into());
            }
            let out_dir = out.or_else(|| cfg.output.clone().map(PathBuf::from));
            match transport {
                Transport::Sim => run_sim(&cfg, out_dir.as_deref()),
                Transport::Udp => {
                    let endpoint = endpoint.ok_or_else(|| {
                        CliError::Config("udp transport requires --endpoint".into())
                    })?;
                    match role {
                        Role::Edge => run_udp_edge(&cfg, &endpoint),
                        Role::Uav => run_udp_uav(&cfg, &endpoint, out_dir.as_deref()),
                    }
                }
            }
        }
        Command::Replay { packet_log } => replay(&packet_log),
        Command::Summary { csv } => summary(&csv),
    }
}

fn print_summary(log: &MetricsLog) {
    let s = log.summary();
    println!("rms_tracking_offboard = {:.6}", s.rms_tracking_offboard);
    println!("rms_tracking_onboard  = {:.6}", s.rms_tracking_onboard);
    println!("rms_tracking_total    = {:.6}", s.rms_tracking_total);
    println!("switch_count          = {}", s.switch_count);
    println!("offboard_time_s       = {:.2}", s.offboard_time);
    println!("onboard_time_s        = {:.2}", s.onboard_time);
}

fn run_sim(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<(), CliError> {
    let log = run_scenario(cfg)?;
    if let Some(dir) = out_dir {
        write_outputs(&log, dir)?;
        println!("wrote {} and {}", dir.join("metrics.csv").display(), dir.join("packets.csv").display());
    }
    print_summary(&log);
    Ok(())
}

fn replay(packet_log: &Path) -> Result<(), CliError> {
    let (t_exec, records) = import_packet_log(packet_log)?;
    let estimates = metrics::replay_estimates(&records, t_exec);
    println!("e_c,e_d,e_mean,l_c,l_d");
    for e in &estimates {
        println!("{:?},{:?},{:?},{:?},{:?}", e.e_c, e.e_d, e.e_mean, e.l_c, e.l_d);
    }
    Ok(())
}

fn summary(csv: &Path) -> Result<(), CliError> {
    let rows = metrics::import_csv(csv)?;
    let tick = infer_tick(&rows);
    let mut log = MetricsLog {
        rows,
        tick,
        ..MetricsLog::default()
    };
    log.t_exec = 0.0;
    print_summary(&log);
    Ok(())
}

fn infer_tick(rows: &[MetricsRow]) -> f64 {
    match rows {
        [a, b, ..] => b.t - a.t,
        _ => 0.0,
    }
}

/// Edge side of the live transport: answers clock probes and turns
/// incoming vehicle states into commands at the controller rate. The
/// mission clock is anchored to the first state received.
fn run_udp_edge(cfg: &ScenarioConfig, endpoint: &str) -> Result<(), CliError> {
    let params = cfg.model.to_params();
    let mpc_cfg = cfg.mpc.to_config(&params);
    let t_exec = mpc_cfg.t_exec();
    let mut solver =
        MpcSolver::new(mpc_cfg, params).map_err(|e| CliError::Config(e.to_string()))?;
    let mut ep = DatagramEndpoint::bind(endpoint, "0.0.0.0:1")?;
    println!("edge listening on {}", ep.local_addr()?);

    let mut t0: Option<f64> = None;
    let mut last_cmd = ControlCommand::hover(params.g, 0.0);
    let mut last_solve = f64::NEG_INFINITY;
    let mut last_state_seq = 0u32;
    loop {
        match ep.try_recv_from() {
            Some((msg, src)) => {
                ep.set_peer(src);
                match msg {
                    WireMsg::Probe { seq, t_send } => ep.answer_probe(seq, t_send)?,
                    WireMsg::State { seq, state } if seq > last_state_seq => {
                        last_state_seq = seq;
                        let now = ep.now();
                        let t0v = *t0.get_or_insert(now - state.t);
                        let tm = now - t0v;
                        if tm - last_solve < t_exec {
                            continue;
                        }
                        last_solve = tm;
                        let l_u = (tm - state.t).max(0.0);
                        let est = estimate_uplink_state(&state, &last_cmd, l_u, &params)
                            .map_err(|e| CliError::Runtime(e.to_string()))?;
                        let refs = cfg.trajectory.reference_horizon(
                            tm,
                            solver.cfg.dt_mpc,
                            solver.cfg.n,
                            params.g,
                        );
                        let (cmd, _, report) = solver.solve(&est, &refs, &last_cmd, tm, seq);
                        if report.status != SolverStatus::Failed {
                            last_cmd = cmd;
                        }
                        ep.send_msg(&WireMsg::Command(cmd))?;
                    }
                    _ => {}
                }
            }
            None => std::thread::sleep(Duration::from_micros(200)),
        }
        if let Some(t0v) = t0 {
            if ep.now() - t0v > cfg.duration + 5.0 {
                break;
            }
        }
    }
    Ok(())
}

/// Vehicle side of the live transport: runs the plant, the switch, and the
/// onboard fallback in real time, talking to a remote edge process.
fn run_udp_uav(
    cfg: &ScenarioConfig,
    endpoint: &str,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let params = cfg.model.to_params();
    let mpc_cfg = cfg.mpc.to_config(&params);
    let t_exec = mpc_cfg.t_exec();
    let tick = cfg.tick;

    let mut ep = DatagramEndpoint::bind("0.0.0.0:0", endpoint)?;
    ep.sync_epoch(20, Duration::from_millis(200))?;

    let mut pid = PidController::new(
        cfg.pid.gains(),
        params.u_th,
        cfg.pid.integral_clamp,
        params.g,
    );
    let start = cfg.trajectory.start_position();
    let home = fallback_setpoint(cfg.pid.home.map(Vector3::from), start);
    // the live run starts at the mission start point; takeoff is assumed done
    let mut state = UavState::at_rest(start, 0.0);

    let mut switch_state = SwitchState::new(cfg.switch.window, cfg.switch.debounce);
    let mut estimator = ErrorEstimator::new(t_exec);
    let forced = cfg
        .switch
        .forced_mode()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut log = MetricsLog {
        t_exec,
        tick,
        ..MetricsLog::default()
    };

    /// Downlink silence that counts as the channel being down, seconds.
    const CHANNEL_DOWN_S: f64 = 0.5;

    let t0 = ep.now();
    let n_ticks = (cfg.duration / tick).round() as usize;
    let mut state_seq = 0u32;
    let mut held_cmd = ControlCommand::hover(params.g, 0.0);
    let mut last_cmd_seq = 0u32;
    let mut last_arrival_speed = 0.0f64;
    let mut last_arrival_t = f64::NEG_INFINITY;
    let mut k_cum = 0u32;
    let mut last_estimate: Option<edgeswitch::switch::ErrorEstimate> = None;
    let mut prev_mode = ControlMode::Offboard;

    for n in 0..n_ticks {
        let target = t0 + n as f64 * tick;
        while ep.now() < target {
            std::thread::sleep(Duration::from_micros(100));
        }
        let t = n as f64 * tick;
        let sinr_now = sinr_at(&cfg.channel.sinr, t);

        state_seq += 1;
        let mut stamped = state;
        stamped.t = t;
        ep.send_msg(&WireMsg::State {
            seq: state_seq,
            state: stamped,
        })?;

        while let Some(msg) = ep.try_recv() {
            if let WireMsg::Command(cmd) = msg {
                if cmd.seq <= last_cmd_seq {
                    continue;
                }
                let t_arr = ep.now() - t0;
                let k = cmd.seq - last_cmd_seq - 1;
                k_cum += k;
                let speed_now = state.v.norm();
                let sample = KpiSample {
                    t_arrival: t_arr,
                    t_created: cmd.t_created.min(t_arr),
                    k,
                    v_prev: last_arrival_speed,
                    sinr: sinr_now,
                };
                if let Ok(Some(est)) = estimator.ingest(&sample) {
                    switch_state.update_window(&est);
                    log.estimates.push(est);
                    last_estimate = Some(est);
                }
                log.arrivals.push(ArrivalRecord {
                    t_arrival: t_arr,
                    t_created: sample.t_created,
                    seq: cmd.seq,
                    speed: speed_now,
                });
                last_cmd_seq = cmd.seq;
                last_arrival_speed = speed_now;
                last_arrival_t = t_arr;
                held_cmd = cmd;
            }
        }

        if t - last_arrival_t > CHANNEL_DOWN_S {
            switch_state.force_channel_down();
        }
        let decision = switch_state.decide(sinr_now, cfg.switch.e_th, cfg.switch.s_th);
        let mode = forced.unwrap_or(decision.mode);
        if mode == ControlMode::Onboard && prev_mode == ControlMode::Offboard {
            pid.reset();
        }
        prev_mode = mode;

        let applied = match mode {
            ControlMode::Offboard => held_cmd,
            ControlMode::Onboard => pid
                .compute(home, &state, tick)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
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

        state = dynamics::step(&state, &applied, tick, &params)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        metrics::export_csv(&log, &dir.join("metrics.csv"))?;
        metrics::export_packet_log(&log, &dir.join("packets.csv"))?;
    }
    print_summary(&log);
    Ok(())
}
