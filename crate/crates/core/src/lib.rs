//! Desk-scale closed-loop simulator of an edge-offloaded UAV control
//! stack: a remote receding-horizon controller reached over a lossy,
//! latency-prone link, an onboard PID fallback, and the two-level
//! switching strategy that arbitrates between them from latency-derived
//! position-error estimates and the radio signal quality.
//!
//! The crate is organized bottom-up:
//!
//! - [`dynamics`]: vehicle model, RK4 integration, saturation
//! - [`mpc`]: edge controller and uplink-delay state estimation
//! - [`pid`]: onboard fallback controller
//! - [`switch`]: downlink error estimation and the two-level switch
//! - [`channel`]: simulated link with latency, drops, congestion, SINR
//! - [`wire`]: binary datagram codec for the live transport
//! - [`udp`]: live datagram endpoints with a startup clock handshake
//! - [`trajectory`]: mission references
//! - [`config`]: TOML scenario schema
//! - [`metrics`]: run artifacts, CSV export, offline replay
//! - [`scenario`]: the closed-loop event loop tying it all together

pub mod channel;
pub mod config;
pub mod dynamics;
pub mod metrics;
pub mod mpc;
pub mod pid;
pub mod scenario;
pub mod switch;
pub mod trajectory;
pub mod udp;
pub mod wire;

pub use config::ScenarioConfig;
pub use metrics::MetricsLog;
pub use scenario::{run_scenario, write_outputs};
pub use switch::ControlMode;
