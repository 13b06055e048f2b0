//! Discrete-event model of one communication direction: per-packet
//! latency sampling, application-layer drops, scheduled congestion
//! windows, and a piecewise-constant SINR trace with an optional
//! SINR-band latency coupling.
//!
//! Latency is drawn from a shifted log-normal: half the configured mean is
//! a deterministic floor, the other half is log-normal with standard
//! deviation `jitter_s`, so the total mean equals `mean_latency_s`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("poll time {t_now} regressed below previous poll {t_prev}")]
    TimeRegression { t_now: f64, t_prev: f64 },
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
}

/// Scheduled interval of degraded service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionWindow {
    pub t_start: f64,
    pub t_end: f64,
    /// Mean of the additional latency while active, s.
    pub added_latency_s: f64,
    /// Standard deviation of the additional latency, s.
    #[serde(default)]
    pub added_jitter_s: f64,
    /// Additional drop probability while active.
    #[serde(default)]
    pub added_drop_prob: f64,
}

/// One step of the SINR-band latency coupling: packets sent while the
/// SINR is below `below_db` pay `added_latency_s` extra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrBand {
    pub below_db: f64,
    pub added_latency_s: f64,
}

/// Piecewise-constant SINR trace given as `(t, value_db)` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SinrTrace {
    pub breakpoints: Vec<(f64, f64)>,
}

impl SinrTrace {
    pub fn constant(db: f64) -> Self {
        Self {
            breakpoints: vec![(0.0, db)],
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.breakpoints.is_empty() {
            return Err(ChannelError::InvalidConfig("empty SINR trace".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ChannelError::InvalidConfig(
                "SINR breakpoints must be strictly increasing in time".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluates the trace at `t`: the value of the segment whose breakpoint
/// is at or before `t` (right-continuous at breakpoints). Times before the
/// first breakpoint return the first value.
pub fn sinr_at(trace: &SinrTrace, t: f64) -> f64 {
    let mut value = trace.breakpoints.first().map(|b| b.1).unwrap_or(0.0);
    for &(bt, bv) in &trace.breakpoints {
        if t >= bt {
            value = bv;
        } else {
            break;
        }
    }
    value
}

/// Configuration of one link direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Mean delivery latency, s.
    pub mean_latency_s: f64,
    /// Standard deviation of the latency, s. Zero makes the link
    /// deterministic at the mean.
    #[serde(default)]
    pub jitter_s: f64,
    /// Application-layer drop probability per packet.
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub congestion: Vec<CongestionWindow>,
    /// In-order delivery: a packet never overtakes its predecessor.
    #[serde(default = "default_true")]
    pub fifo: bool,
    /// SINR-band latency coupling, applied against the shared SINR trace.
    #[serde(default)]
    pub sinr_coupling: Vec<SinrBand>,
}

fn default_true() -> bool {
    true
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            mean_latency_s: 0.002,
            jitter_s: 0.0005,
            drop_prob: 0.0,
            congestion: Vec::new(),
            fifo: true,
            sinr_coupling: Vec::new(),
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.mean_latency_s < 0.0 || self.jitter_s < 0.0 {
            return Err(ChannelError::InvalidConfig(
                "latencies must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(ChannelError::InvalidConfig(
                "drop_prob must be in [0, 1]".into(),
            ));
        }
        let mut sorted: Vec<_> = self.congestion.to_vec();
        sorted.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        for w in &sorted {
            if w.t_end <= w.t_start {
                return Err(ChannelError::InvalidConfig(
                    "congestion window must have t_end > t_start".into(),
                ));
            }
            if w.added_latency_s < 0.0 || !(0.0..=1.0).contains(&w.added_drop_prob) {
                return Err(ChannelError::InvalidConfig(
                    "congestion parameters out of range".into(),
                ));
            }
        }
        if sorted.windows(2).any(|p| p[1].t_start < p[0].t_end) {
            return Err(ChannelError::InvalidConfig(
                "congestion windows must not overlap".into(),
            ));
        }
        Ok(())
    }

    fn active_congestion(&self, t: f64) -> Option<&CongestionWindow> {
        self.congestion
            .iter()
            .find(|w| t >= w.t_start && t < w.t_end)
    }

    /// Coupled latency for a given SINR: the tightest matching band wins.
    fn coupling_latency(&self, sinr: f64) -> f64 {
        self.sinr_coupling
            .iter()
            .filter(|b| sinr < b.below_db)
            .min_by(|a, b| a.below_db.total_cmp(&b.below_db))
            .map(|b| b.added_latency_s)
            .unwrap_or(0.0)
    }
}

/// Fate of a sent packet, for the event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PacketOutcome {
    Delivered { t_deliver: f64 },
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEvent {
    pub seq: u32,
    pub t_send: f64,
    pub outcome: PacketOutcome,
}

/// A delivered packet popped from the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery<T> {
    pub seq: u32,
    pub t_send: f64,
    pub t_deliver: f64,
    pub payload: T,
}

struct InFlight<T> {
    t_deliver: f64,
    t_send: f64,
    seq: u32,
    payload: T,
}

impl<T> PartialEq for InFlight<T> {
    fn eq(&self, other: &Self) -> bool {
        self.t_deliver == other.t_deliver && self.seq == other.seq
    }
}
impl<T> Eq for InFlight<T> {}
impl<T> PartialOrd for InFlight<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for InFlight<T> {
    // reversed: BinaryHeap is a max-heap, we want earliest delivery first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t_deliver
            .total_cmp(&self.t_deliver)
            .then(other.seq.cmp(&self.seq))
    }
}

/// One simulated link direction. Owned by the single-threaded event loop.
pub struct SimLink<T> {
    pub cfg: LinkConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<InFlight<T>>,
    last_deliver_assigned: f64,
    last_poll: f64,
    pub events: Vec<LinkEvent>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl<T> SimLink<T> {
    pub fn new(cfg: LinkConfig, seed: u64) -> Result<Self, ChannelError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            last_deliver_assigned: f64::NEG_INFINITY,
            last_poll: f64::NEG_INFINITY,
            events: Vec::new(),
            sent: 0,
            delivered: 0,
            dropped: 0,
        })
    }

    fn sample_latency(&mut self, t_now: f64, sinr_now: f64) -> f64 {
        let mut latency = sample_shifted_lognormal(
            &mut self.rng,
            self.cfg.mean_latency_s,
            self.cfg.jitter_s,
        );
        if let Some(w) = self.cfg.active_congestion(t_now) {
            latency += sample_shifted_lognormal(&mut self.rng, w.added_latency_s, w.added_jitter_s);
        }
        latency += self.cfg.coupling_latency(sinr_now);
        latency
    }

    /// Sends a packet at `t_now`. It is either enqueued with a sampled
    /// delivery time or dropped; both outcomes are recorded in the event
    /// log.
    pub fn send(&mut self, payload: T, seq: u32, t_now: f64, sinr_now: f64) {
        self.sent += 1;
        let mut p_drop = self.cfg.drop_prob;
        if let Some(w) = self.cfg.active_congestion(t_now) {
            p_drop = (p_drop + w.added_drop_prob).min(1.0);
        }
        // drop decision first, then (only if delivered) the latency draw,
        // so the stream of random numbers is stable per packet fate
        if p_drop > 0.0 && self.rng.gen::<f64>() < p_drop {
            self.dropped += 1;
            self.events.push(LinkEvent {
                seq,
                t_send: t_now,
                outcome: PacketOutcome::Dropped,
            });
            return;
        }
        let mut t_deliver = t_now + self.sample_latency(t_now, sinr_now);
        if self.cfg.fifo && t_deliver < self.last_deliver_assigned {
            t_deliver = self.last_deliver_assigned;
        }
        self.last_deliver_assigned = t_deliver;
        self.events.push(LinkEvent {
            seq,
            t_send: t_now,
            outcome: PacketOutcome::Delivered { t_deliver },
        });
        self.queue.push(InFlight {
            t_deliver,
            t_send: t_now,
            seq,
            payload,
        });
    }

    /// Returns all packets due at or before `t_now`, in delivery order.
    /// Poll times must be non-decreasing.
    pub fn poll_deliveries(&mut self, t_now: f64) -> Result<Vec<Delivery<T>>, ChannelError> {
        if t_now < self.last_poll {
            return Err(ChannelError::TimeRegression {
                t_now,
                t_prev: self.last_poll,
            });
        }
        self.last_poll = t_now;
        let mut out = Vec::new();
        while let Some(head) = self.queue.peek() {
            if head.t_deliver > t_now {
                break;
            }
            let pkt = self.queue.pop().expect("peeked");
            self.delivered += 1;
            out.push(Delivery {
                seq: pkt.seq,
                t_send: pkt.t_send,
                t_deliver: pkt.t_deliver,
                payload: pkt.payload,
            });
        }
        Ok(out)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

/// Shifted log-normal draw with the given mean and standard deviation:
/// `mean / 2` deterministic floor plus a log-normal with mean `mean / 2`
/// and std `stddev`. Zero jitter degenerates to the mean exactly.
fn sample_shifted_lognormal(rng: &mut ChaCha8Rng, mean: f64, stddev: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if stddev <= 0.0 {
        return mean;
    }
    let body_mean = mean / 2.0;
    let cv2 = (stddev / body_mean).powi(2);
    let sigma2 = (1.0 + cv2).ln();
    let mu = body_mean.ln() - sigma2 / 2.0;
    let dist = LogNormal::new(mu, sigma2.sqrt()).expect("valid log-normal parameters");
    mean / 2.0 + dist.sample(rng)
}
