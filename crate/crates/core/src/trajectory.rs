//! Reference trajectory generation for the mission loop.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::mpc::ReferencePoint;

/// Mission reference shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Circle {
        /// Center of the circle in the horizontal plane; the z component
        /// is ignored in favor of `height`.
        center: [f64; 3],
        radius: f64,
        /// Angular rate, rad/s.
        omega: f64,
        height: f64,
    },
    Hover {
        position: [f64; 3],
    },
    Waypoints {
        points: Vec<[f64; 3]>,
        /// Seconds each waypoint is held.
        hold_s: f64,
    },
}

impl Trajectory {
    /// Position of the reference at mission time zero; takeoff targets it.
    pub fn start_position(&self) -> Vector3<f64> {
        match self {
            Trajectory::Circle {
                center,
                radius,
                height,
                ..
            } => Vector3::new(center[0] + radius, center[1], *height),
            Trajectory::Hover { position } => Vector3::from(*position),
            Trajectory::Waypoints { points, .. } => points
                .first()
                .map(|p| Vector3::from(*p))
                .unwrap_or_else(Vector3::zeros),
        }
    }

    /// Previewed reference over a prediction horizon: `n` points starting
    /// one step after `t`, matching the state samples of the rollout.
    pub fn reference_horizon(
        &self,
        t: f64,
        dt: f64,
        n: usize,
        hover_thrust: f64,
    ) -> Vec<ReferencePoint> {
        (1..=n)
            .map(|j| self.reference_at(t + j as f64 * dt, hover_thrust))
            .collect()
    }

    pub fn reference_at(&self, t: f64, hover_thrust: f64) -> ReferencePoint {
        match self {
            Trajectory::Circle {
                center,
                radius,
                omega,
                height,
            } => circle_reference(
                t,
                Vector3::from(*center),
                *radius,
                *omega,
                *height,
                hover_thrust,
            ),
            Trajectory::Hover { position } => {
                ReferencePoint::hover_at(Vector3::from(*position), hover_thrust)
            }
            Trajectory::Waypoints { points, hold_s } => {
                let p = if points.is_empty() {
                    Vector3::zeros()
                } else {
                    let idx = ((t / hold_s).floor().max(0.0) as usize).min(points.len() - 1);
                    Vector3::from(points[idx])
                };
                ReferencePoint::hover_at(p, hover_thrust)
            }
        }
    }
}

/// Circular reference at time `t`: position on the circle with the
/// analytic velocity, attitude references zero, hover input.
pub fn circle_reference(
    t: f64,
    center: Vector3<f64>,
    radius: f64,
    omega: f64,
    height: f64,
    hover_thrust: f64,
) -> ReferencePoint {
    let (s, c) = (omega * t).sin_cos();
    let p = Vector3::new(center[0] + radius * c, center[1] + radius * s, height);
    let v = Vector3::new(-radius * omega * s, radius * omega * c, 0.0);
    let mut r = ReferencePoint::hover_at(p, hover_thrust);
    r.x_d[3] = v[0];
    r.x_d[4] = v[1];
    r.x_d[5] = v[2];
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const G: f64 = 9.81;

    #[test]
    fn degenerate_circle_is_hover() {
        let c = Vector3::new(0.0, 4.0, 0.0);
        for t in [0.0, 1.3, 17.2] {
            let r = circle_reference(t, c, 0.0, 0.5, 0.8, G);
            assert_abs_diff_eq!(r.x_d[0], 0.0);
            assert_abs_diff_eq!(r.x_d[1], 4.0);
            assert_abs_diff_eq!(r.x_d[2], 0.8);
            assert_abs_diff_eq!(r.x_d[3], 0.0);
            assert_abs_diff_eq!(r.x_d[4], 0.0);
        }
    }

    #[test]
    fn circle_start_point() {
        let r = circle_reference(0.0, Vector3::new(0.0, 4.0, 0.0), 1.0, 0.5, 0.8, G);
        assert_abs_diff_eq!(r.x_d[0], 1.0);
        assert_abs_diff_eq!(r.x_d[1], 4.0);
        assert_abs_diff_eq!(r.x_d[2], 0.8);
    }

    #[test]
    fn circle_speed_is_radius_times_omega() {
        let (radius, omega) = (1.0, 0.5);
        for t in [0.0, 0.7, 3.0, 12.9] {
            let r = circle_reference(t, Vector3::zeros(), radius, omega, 0.8, G);
            let speed = (r.x_d[3].powi(2) + r.x_d[4].powi(2) + r.x_d[5].powi(2)).sqrt();
            assert_abs_diff_eq!(speed, radius * omega, epsilon = 1e-12);
        }
    }

    #[test]
    fn circle_velocity_is_position_derivative() {
        let (radius, omega) = (1.3, 0.7);
        let c = Vector3::new(1.0, -2.0, 0.0);
        let h = 1e-6;
        for t in [0.5, 4.1] {
            let r = circle_reference(t, c, radius, omega, 1.0, G);
            let rp = circle_reference(t + h, c, radius, omega, 1.0, G);
            let rm = circle_reference(t - h, c, radius, omega, 1.0, G);
            for i in 0..3 {
                let fd = (rp.x_d[i] - rm.x_d[i]) / (2.0 * h);
                assert_abs_diff_eq!(r.x_d[3 + i], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn waypoints_hold_and_clamp() {
        let traj = Trajectory::Waypoints {
            points: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]],
            hold_s: 5.0,
        };
        assert_abs_diff_eq!(traj.reference_at(2.0, G).x_d[0], 0.0);
        assert_abs_diff_eq!(traj.reference_at(7.0, G).x_d[0], 1.0);
        // past the last waypoint: hold it
        assert_abs_diff_eq!(traj.reference_at(100.0, G).x_d[0], 1.0);
    }
}
