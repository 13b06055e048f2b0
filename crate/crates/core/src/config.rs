//! Scenario configuration: the TOML schema of an experiment and its
//! validation. Weight matrices are configured as diagonals; the full
//! matrices live in the runtime [`MpcConfig`].

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{LinkConfig, SinrTrace};
use crate::dynamics::{ModelParams, StateVec};
use crate::mpc::{InputWeights, MpcConfig, StateWeights};
use crate::pid::PidGains;
use crate::switch::ControlMode;
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub damping: [f64; 3],
    pub g: f64,
    pub k_phi: f64,
    pub k_theta: f64,
    pub tau_phi: f64,
    pub tau_theta: f64,
    /// Saturation bound: thrust deviation (m/s²), roll (rad), pitch (rad).
    pub u_th: [f64; 3],
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            damping: p.damping.into(),
            g: p.g,
            k_phi: p.k_phi,
            k_theta: p.k_theta,
            tau_phi: p.tau_phi,
            tau_theta: p.tau_theta,
            u_th: p.u_th.into(),
        }
    }
}

impl ModelSection {
    pub fn to_params(&self) -> ModelParams {
        ModelParams {
            damping: Vector3::from(self.damping),
            g: self.g,
            k_phi: self.k_phi,
            k_theta: self.k_theta,
            tau_phi: self.tau_phi,
            tau_theta: self.tau_theta,
            u_th: Vector3::from(self.u_th),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcSection {
    pub n: usize,
    pub dt_mpc: f64,
    /// Diagonal of the state weight matrix (p, v, phi, theta).
    pub q_x: [f64; 8],
    pub q_u: [f64; 3],
    pub q_du: [f64; 3],
    /// Input box as offsets: thrust in [g - u_th_t, g + u_th_t] comes from
    /// the model section; these override when set.
    pub u_min: Option<[f64; 3]>,
    pub u_max: Option<[f64; 3]>,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_exec: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            n: 40,
            dt_mpc: 0.05,
            q_x: [8.0, 8.0, 12.0, 1.0, 1.0, 1.5, 2.0, 2.0],
            q_u: [1.0, 4.0, 4.0],
            q_du: [2.0, 8.0, 8.0],
            u_min: None,
            u_max: None,
            max_iters: 40,
            grad_tol: 1e-3,
            f_exec: 20.0,
        }
    }
}

impl MpcSection {
    pub fn to_config(&self, model: &ModelParams) -> MpcConfig {
        let u_min = self
            .u_min
            .map(Vector3::from)
            .unwrap_or_else(|| {
                Vector3::new(model.g - model.u_th[0], -model.u_th[1], -model.u_th[2])
            });
        let u_max = self
            .u_max
            .map(Vector3::from)
            .unwrap_or_else(|| {
                Vector3::new(model.g + model.u_th[0], model.u_th[1], model.u_th[2])
            });
        MpcConfig {
            n: self.n,
            dt_mpc: self.dt_mpc,
            q_x: StateWeights::from_diagonal(&StateVec::from_column_slice(&self.q_x)),
            q_u: InputWeights::from_diagonal(&Vector3::from(self.q_u)),
            q_du: InputWeights::from_diagonal(&Vector3::from(self.q_du)),
            u_min,
            u_max,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            f_exec: self.f_exec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidSection {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    pub integral_clamp: f64,
    /// Home/hover position for the fallback planner; defaults to the
    /// takeoff position when unset.
    pub home: Option<[f64; 3]>,
}

impl Default for PidSection {
    fn default() -> Self {
        let g = PidGains::default();
        Self {
            kp: g.kp.into(),
            ki: g.ki.into(),
            kd: g.kd.into(),
            integral_clamp: 1.0,
            home: None,
        }
    }
}

impl PidSection {
    pub fn gains(&self) -> PidGains {
        PidGains {
            kp: Vector3::from(self.kp),
            ki: Vector3::from(self.ki),
            kd: Vector3::from(self.kd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwitchSection {
    /// Error threshold, m.
    pub e_th: f64,
    /// SINR threshold, dB.
    pub s_th: f64,
    /// Sliding window size, samples.
    pub window: usize,
    /// Consecutive low-SINR samples before the SINR gate trips.
    pub debounce: usize,
    /// Pin the mode for ablation runs: "offboard" or "onboard".
    pub force_mode: Option<String>,
}

impl Default for SwitchSection {
    fn default() -> Self {
        Self {
            e_th: 0.15,
            s_th: 6.0,
            window: 50,
            debounce: 3,
            force_mode: None,
        }
    }
}

impl SwitchSection {
    pub fn forced_mode(&self) -> Result<Option<ControlMode>, ConfigError> {
        match self.force_mode.as_deref() {
            None => Ok(None),
            Some("offboard") => Ok(Some(ControlMode::Offboard)),
            Some("onboard") => Ok(Some(ControlMode::Onboard)),
            Some(other) => Err(ConfigError::Invalid(format!(
                "force_mode must be \"offboard\" or \"onboard\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSection {
    pub uplink: LinkConfig,
    pub downlink: LinkConfig,
    pub sinr: SinrTrace,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            uplink: LinkConfig::default(),
            downlink: LinkConfig::default(),
            sinr: SinrTrace::constant(20.0),
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub model: ModelSection,
    pub mpc: MpcSection,
    pub pid: PidSection,
    pub switch: SwitchSection,
    pub channel: ChannelSection,
    pub trajectory: Trajectory,
    /// Mission duration, s.
    pub duration: f64,
    /// Vehicle-side loop period, s.
    pub tick: f64,
    pub seed: u64,
    /// Output directory for the metrics and packet logs.
    pub output: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            mpc: MpcSection::default(),
            pid: PidSection::default(),
            switch: SwitchSection::default(),
            channel: ChannelSection::default(),
            trajectory: Trajectory::Circle {
                center: [0.0, 4.0, 0.0],
                radius: 1.0,
                omega: 0.5,
                height: 0.8,
            },
            duration: 60.0,
            tick: 0.01,
            seed: 1,
            output: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration <= 0.0 {
            return Err(ConfigError::Invalid("duration must be positive".into()));
        }
        if self.tick <= 0.0 {
            return Err(ConfigError::Invalid("tick must be positive".into()));
        }
        let model = self.model.to_params();
        model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mpc = self.mpc.to_config(&model);
        mpc.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        // arrival timestamps must resolve drops
        if self.tick > mpc.t_exec() / 2.0 + 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "tick {} must be at most half the controller period {}",
                self.tick,
                mpc.t_exec()
            )));
        }
        if self.switch.e_th <= 0.0 || self.switch.window < 1 || self.switch.debounce < 1 {
            return Err(ConfigError::Invalid(
                "switch thresholds, window, and debounce must be positive".into(),
            ));
        }
        self.switch.forced_mode()?;
        for (name, link) in [("uplink", &self.channel.uplink), ("downlink", &self.channel.downlink)]
        {
            link.validate()
                .map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        self.channel
            .sinr
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match &self.trajectory {
            Trajectory::Circle { radius, .. } if *radius < 0.0 => {
                return Err(ConfigError::Invalid("circle radius must be >= 0".into()));
            }
            Trajectory::Waypoints { points, hold_s } => {
                if points.is_empty() || *hold_s <= 0.0 {
                    return Err(ConfigError::Invalid(
                        "waypoint trajectory needs points and a positive hold time".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str("duration = 10.0\n").unwrap();
        assert_eq!(cfg.duration, 10.0);
        assert_eq!(cfg.switch.e_th, 0.15);
        assert_eq!(cfg.switch.s_th, 6.0);
        assert_eq!(cfg.switch.window, 50);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(ScenarioConfig::from_toml_str("duration = -1.0").is_err());
        assert!(ScenarioConfig::from_toml_str("tick = 0.2").is_err());
        let bad_mode = r#"
            [switch]
            force_mode = "sideways"
        "#;
        assert!(ScenarioConfig::from_toml_str(bad_mode).is_err());
    }

    #[test]
    fn scenario_sections_parse() {
        let text = r#"
            duration = 30.0
            seed = 7

            [trajectory]
            kind = "circle"
            center = [0.0, 4.0, 0.0]
            radius = 1.0
            omega = 0.5
            height = 0.8

            [channel.downlink]
            mean_latency_s = 0.002
            jitter_s = 0.0005

            [[channel.downlink.congestion]]
            t_start = 18.5
            t_end = 26.5
            added_latency_s = 0.5
            added_drop_prob = 0.8

            [channel.sinr]
            breakpoints = [[0.0, 20.0], [30.0, 4.0], [40.0, 20.0]]
        "#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.channel.downlink.congestion.len(), 1);
        assert_eq!(cfg.channel.sinr.breakpoints.len(), 3);
    }
}
