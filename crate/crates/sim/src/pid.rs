//! Waypoint-following PID controller.

use std::collections::VecDeque;

use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::vehicle::ControlCommand;

pub const DEFAULT_WINDOW: usize = 20;
pub const BRAKE_SPEED: f64 = 0.4;
pub const BRAKE_RATIO: f64 = 1.1;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Gains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Gains {
    pub const fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }
}

/// One PID loop whose integral is the mean error over a sliding window.
#[derive(Clone, Debug, PartialEq)]
pub struct PidLoop {
    pub gains: Gains,
    window: VecDeque<f64>,
    capacity: usize,
}

impl PidLoop {
    pub fn new(gains: Gains, capacity: usize) -> Self {
        Self {
            gains,
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn step(&mut self, error: f64) -> f64 {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(error);
        let n = self.window.len();
        let integral = self.window.iter().sum::<f64>() / n as f64;
        let derivative = if n >= 2 { self.window[n - 1] - self.window[n - 2] } else { 0.0 };
        self.gains.kp * error + self.gains.ki * integral + self.gains.kd * derivative
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PidConfig {
    pub lateral: Gains,
    pub longitudinal: Gains,
    pub window: usize,
    pub v_max: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            lateral: Gains::new(1.25, 0.75, 0.3),
            longitudinal: Gains::new(5.0, 0.5, 1.0),
            window: DEFAULT_WINDOW,
            v_max: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PidState {
    pub lateral: PidLoop,
    pub longitudinal: PidLoop,
    pub v_max: f64,
}

impl PidState {
    pub fn new(config: &PidConfig) -> Self {
        Self {
            lateral: PidLoop::new(config.lateral, config.window),
            longitudinal: PidLoop::new(config.longitudinal, config.window),
            v_max: config.v_max,
        }
    }
}

impl Default for PidState {
    fn default() -> Self {
        Self::new(&PidConfig::default())
    }
}

/// Desired speed implied by the waypoint spacing, in m/s.
pub fn desired_speed(waypoints: &[Vec2; 4], v_max: f64) -> f64 {
    (2.0 * (waypoints[1] - waypoints[0]).norm()).min(v_max)
}

/// Converts four ego-frame waypoints (x forward, y right) and the current
/// speed into a command, updating both loops.
pub fn control_step(waypoints: &[Vec2; 4], speed: f64, state: &mut PidState) -> Result<ControlCommand> {
    if waypoints.iter().any(|w| !w.x.is_finite() || !w.y.is_finite()) || !speed.is_finite() {
        return Err(SimError::Controller(format!("non-finite controller input: {waypoints:?}, speed {speed}")));
    }
    let aim = (waypoints[0] + waypoints[1]) * 0.5;
    let theta = aim.y.atan2(aim.x);
    let steer = state.lateral.step(theta).clamp(-1.0, 1.0);
    let desired = desired_speed(waypoints, state.v_max);
    let throttle = state.longitudinal.step(desired - speed).clamp(0.0, 1.0);
    let brake = desired < BRAKE_SPEED || speed > BRAKE_RATIO * desired;
    Ok(ControlCommand {
        steer,
        throttle: if brake { 0.0 } else { throttle },
        brake,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wps(p: [(f64, f64); 4]) -> [Vec2; 4] {
        p.map(|(x, y)| Vec2::new(x, y))
    }

    #[test]
    fn straight_at_desired_speed_is_neutral() {
        let w = wps([(1., 0.), (2., 0.), (3., 0.), (4., 0.)]);
        let mut s = PidState::default();
        let c = control_step(&w, desired_speed(&w, 6.0), &mut s).unwrap();
        assert_eq!(c.steer, 0.0);
        assert_eq!(c.throttle, 0.0);
        assert!(!c.brake);
    }

    #[test]
    fn coincident_waypoints_brake() {
        let w = wps([(0., 0.); 4]);
        let c = control_step(&w, 3.0, &mut PidState::default()).unwrap();
        assert!(c.brake);
        assert_eq!(c.throttle, 0.0);
    }

    #[test]
    fn proportional_only_steer_is_heading_error() {
        let cfg = PidConfig {
            lateral: Gains::new(1.0, 0.0, 0.0),
            ..PidConfig::default()
        };
        let w = wps([(1., 1.), (3., 3.), (4., 4.), (5., 5.)]);
        let c = control_step(&w, 0.0, &mut PidState::new(&cfg)).unwrap();
        assert!((c.steer - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn nan_waypoint_is_controller_error() {
        let w = wps([(1., f64::NAN), (2., 0.), (3., 0.), (4., 0.)]);
        assert!(matches!(control_step(&w, 1.0, &mut PidState::default()), Err(SimError::Controller(_))));
    }

    #[test]
    fn window_is_bounded() {
        let mut l = PidLoop::new(Gains::new(0.0, 1.0, 0.0), 3);
        for e in [9.0, 9.0, 9.0, 1.0, 1.0, 1.0] {
            l.step(e);
        }
        assert_eq!(l.len(), 3);
        assert_eq!(l.step(1.0), 1.0);
    }
}
