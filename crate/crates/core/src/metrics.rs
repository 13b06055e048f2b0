//! Run artifacts: the per-tick metrics log, its CSV form, the raw packet
//! log with the offline replay recomputation, and the run summary.
//!
//! The metrics CSV prints floats at 9 significant digits. The packet log
//! prints floats with the shortest round-tripping representation so the
//! offline replay reproduces the live estimator bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::switch::{ControlMode, ErrorEstimate};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("failed writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {what} at line {line}: {detail}")]
    Parse {
        what: &'static str,
        line: usize,
        detail: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One exported row per vehicle tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    pub p: Vector3<f64>,
    pub p_ref: Vector3<f64>,
    pub v: Vector3<f64>,
    pub mode: ControlMode,
    pub windowed_error: f64,
    pub e_c: f64,
    pub e_d: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub sinr: f64,
    /// Cumulative dropped-command count observed from sequence gaps.
    pub k_cumulative: u32,
    /// Sequence number of the most recently delivered edge command.
    pub cmd_seq: u32,
}

/// Raw record of one valid command arrival, enough to recompute the
/// error-estimate series offline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalRecord {
    pub t_arrival: f64,
    pub t_created: f64,
    pub seq: u32,
    /// Vehicle speed at this arrival, m/s.
    pub speed: f64,
}

/// Edge-side prediction bookkeeping: compensated and raw position
/// prediction error against the true state at solve time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorRecord {
    pub t: f64,
    pub err_compensated: f64,
    pub err_uncompensated: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub solves: u64,
    pub total_iterations: u64,
    pub max_iterations: usize,
    pub failures: u64,
}

impl SolverStats {
    pub fn mean_iterations(&self) -> f64 {
        if self.solves == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.solves as f64
        }
    }
}

/// Row-derived summary of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunSummary {
    pub rms_tracking_offboard: f64,
    pub rms_tracking_onboard: f64,
    pub rms_tracking_total: f64,
    pub switch_count: u32,
    pub offboard_time: f64,
    pub onboard_time: f64,
}

/// Complete artifact of one run.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Command triple applied at each tick (parallel to `rows`); kept in
    /// memory for consistency checks, not exported.
    pub applied: Vec<(f64, f64, f64)>,
    pub arrivals: Vec<ArrivalRecord>,
    /// Live estimator outputs, parallel to `arrivals` from the second
    /// arrival on.
    pub estimates: Vec<ErrorEstimate>,
    pub estimator_records: Vec<EstimatorRecord>,
    pub solver: SolverStats,
    /// Execution period the estimator used, needed by the replay.
    pub t_exec: f64,
    pub tick: f64,
}

impl MetricsLog {
    /// Recomputes the row-derived summary.
    pub fn summary(&self) -> RunSummary {
        summarize(&self.rows, self.tick)
    }
}

pub fn summarize(rows: &[MetricsRow], tick: f64) -> RunSummary {
    let mut s = RunSummary::default();
    let mut sq = [0.0f64; 2];
    let mut n = [0u64; 2];
    let mut last_mode: Option<ControlMode> = None;
    for r in rows {
        let e2 = (r.p - r.p_ref).norm_squared();
        let idx = match r.mode {
            ControlMode::Offboard => 0,
            ControlMode::Onboard => 1,
        };
        sq[idx] += e2;
        n[idx] += 1;
        if let Some(m) = last_mode {
            if m != r.mode {
                s.switch_count += 1;
            }
        }
        last_mode = Some(r.mode);
    }
    s.rms_tracking_offboard = if n[0] > 0 { (sq[0] / n[0] as f64).sqrt() } else { 0.0 };
    s.rms_tracking_onboard = if n[1] > 0 { (sq[1] / n[1] as f64).sqrt() } else { 0.0 };
    let total_n = n[0] + n[1];
    s.rms_tracking_total = if total_n > 0 {
        ((sq[0] + sq[1]) / total_n as f64).sqrt()
    } else {
        0.0
    };
    s.offboard_time = n[0] as f64 * tick;
    s.onboard_time = n[1] as f64 * tick;
    s
}

/// 9 significant digits.
fn fmt_sig(x: f64) -> String {
    format!("{x:.8e}")
}

pub const CSV_HEADER: &str =
    "t,px,py,pz,rx,ry,rz,vx,vy,vz,mode,windowed_error,e_c,e_d,l_c,l_d,sinr,k_cum,cmd_seq";

pub fn csv_string(log: &MetricsLog) -> String {
    let mut out = String::with_capacity(log.rows.len() * 160 + 512);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.rows {
        let floats = [
            r.t, r.p[0], r.p[1], r.p[2], r.p_ref[0], r.p_ref[1], r.p_ref[2], r.v[0], r.v[1],
            r.v[2],
        ];
        for f in floats {
            let _ = write!(out, "{},", fmt_sig(f));
        }
        let _ = write!(out, "{},", r.mode);
        for f in [r.windowed_error, r.e_c, r.e_d, r.l_c, r.l_d, r.sinr] {
            let _ = write!(out, "{},", fmt_sig(f));
        }
        let _ = writeln!(out, "{},{}", r.k_cumulative, r.cmd_seq);
    }
    let s = log.summary();
    let _ = writeln!(out, "# summary");
    let _ = writeln!(out, "# rms_tracking_offboard = {}", fmt_sig(s.rms_tracking_offboard));
    let _ = writeln!(out, "# rms_tracking_onboard = {}", fmt_sig(s.rms_tracking_onboard));
    let _ = writeln!(out, "# rms_tracking_total = {}", fmt_sig(s.rms_tracking_total));
    let _ = writeln!(out, "# switch_count = {}", s.switch_count);
    let _ = writeln!(out, "# offboard_time_s = {}", fmt_sig(s.offboard_time));
    let _ = writeln!(out, "# onboard_time_s = {}", fmt_sig(s.onboard_time));
    let _ = writeln!(out, "# solver_solves = {}", log.solver.solves);
    let _ = writeln!(out, "# solver_mean_iters = {}", fmt_sig(log.solver.mean_iterations()));
    let _ = writeln!(out, "# solver_max_iters = {}", log.solver.max_iterations);
    let _ = writeln!(out, "# solver_failures = {}", log.solver.failures);
    out
}

/// Writes header + rows + the trailing commented summary block.
pub fn export_csv(log: &MetricsLog, path: &Path) -> Result<(), MetricsError> {
    std::fs::write(path, csv_string(log)).map_err(|e| io_err(path, e))
}

/// Parses rows back from an exported metrics CSV. Comment lines and the
/// header are skipped.
pub fn import_csv(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.starts_with('#') || line.is_empty() {
            continue;
        }
        let parse = |s: &str, what: &'static str| -> Result<f64, MetricsError> {
            s.parse::<f64>().map_err(|e| MetricsError::Parse {
                what: "metrics row",
                line: i + 1,
                detail: format!("{what}: {e}"),
            })
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 19 {
            return Err(MetricsError::Parse {
                what: "metrics row",
                line: i + 1,
                detail: format!("expected 19 fields, got {}", fields.len()),
            });
        }
        let mode = match fields[10] {
            "offboard" => ControlMode::Offboard,
            "onboard" => ControlMode::Onboard,
            other => {
                return Err(MetricsError::Parse {
                    what: "metrics row",
                    line: i + 1,
                    detail: format!("unknown mode {other:?}"),
                })
            }
        };
        rows.push(MetricsRow {
            t: parse(fields[0], "t")?,
            p: Vector3::new(
                parse(fields[1], "px")?,
                parse(fields[2], "py")?,
                parse(fields[3], "pz")?,
            ),
            p_ref: Vector3::new(
                parse(fields[4], "rx")?,
                parse(fields[5], "ry")?,
                parse(fields[6], "rz")?,
            ),
            v: Vector3::new(
                parse(fields[7], "vx")?,
                parse(fields[8], "vy")?,
                parse(fields[9], "vz")?,
            ),
            mode,
            windowed_error: parse(fields[11], "windowed_error")?,
            e_c: parse(fields[12], "e_c")?,
            e_d: parse(fields[13], "e_d")?,
            l_c: parse(fields[14], "l_c")?,
            l_d: parse(fields[15], "l_d")?,
            sinr: parse(fields[16], "sinr")?,
            k_cumulative: fields[17].parse().map_err(|e| MetricsError::Parse {
                what: "metrics row",
                line: i + 1,
                detail: format!("k_cum: {e}"),
            })?,
            cmd_seq: fields[18].parse().map_err(|e| MetricsError::Parse {
                what: "metrics row",
                line: i + 1,
                detail: format!("cmd_seq: {e}"),
            })?,
        });
    }
    Ok(rows)
}

/// Writes the raw packet log: one line per valid command arrival, floats
/// at full round-trip precision, with the execution period in the header.
pub fn export_packet_log(log: &MetricsLog, path: &Path) -> Result<(), MetricsError> {
    let mut out = String::with_capacity(log.arrivals.len() * 80 + 128);
    let _ = writeln!(out, "# t_exec = {:?}", log.t_exec);
    let _ = writeln!(out, "t_arrival,t_created,seq,speed");
    for a in &log.arrivals {
        let _ = writeln!(
            out,
            "{:?},{:?},{},{:?}",
            a.t_arrival, a.t_created, a.seq, a.speed
        );
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn import_packet_log(path: &Path) -> Result<(f64, Vec<ArrivalRecord>), MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut t_exec = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# t_exec = ") {
            t_exec = Some(rest.trim().parse::<f64>().map_err(|e| MetricsError::Parse {
                what: "packet log",
                line: i + 1,
                detail: e.to_string(),
            })?);
            continue;
        }
        if line.starts_with('#') || line.starts_with("t_arrival") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(MetricsError::Parse {
                what: "packet log",
                line: i + 1,
                detail: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let err = |detail: String| MetricsError::Parse {
            what: "packet log",
            line: i + 1,
            detail,
        };
        records.push(ArrivalRecord {
            t_arrival: fields[0].parse().map_err(|e| err(format!("t_arrival: {e}")))?,
            t_created: fields[1].parse().map_err(|e| err(format!("t_created: {e}")))?,
            seq: fields[2].parse().map_err(|e| err(format!("seq: {e}")))?,
            speed: fields[3].parse().map_err(|e| err(format!("speed: {e}")))?,
        });
    }
    let t_exec = t_exec.ok_or(MetricsError::Parse {
        what: "packet log",
        line: 0,
        detail: "missing '# t_exec = ...' header".into(),
    })?;
    Ok((t_exec, records))
}

/// Offline recomputation of the error-estimate series from a raw arrival
/// log. Written as a straight-line loop over the defining formulas,
/// independent of the live estimator path, so it can serve as its oracle.
pub fn replay_estimates(records: &[ArrivalRecord], t_exec: f64) -> Vec<ErrorEstimate> {
    let mut out = Vec::new();
    for pair in records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let k = cur.seq.saturating_sub(prev.seq + 1);
        let l_c = cur.t_arrival - prev.t_arrival;
        let l_d = cur.t_arrival - cur.t_created + t_exec * k as f64;
        let v_prev = prev.speed;
        let e_c = v_prev * l_c;
        let e_d = v_prev * l_d;
        out.push(ErrorEstimate {
            e_c,
            e_d,
            e_mean: (e_c + e_d) / 2.0,
            l_c,
            l_d,
        });
    }
    out
}
