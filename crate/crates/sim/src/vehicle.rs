//! Kinematic bicycle model and control commands.

use crate::geom::{Obb, Pose, Vec2};

pub const DT: f64 = 0.1;
pub const WHEELBASE: f64 = 2.5;
/// Wheel angle at full steer command, radians.
pub const MAX_STEER: f64 = 0.61;
pub const V_MAX: f64 = 8.0;
pub const ACCEL: f64 = 4.0;
pub const BRAKE_DECEL: f64 = 6.0;
pub const DRAG: f64 = 0.15;
pub const HALF_LENGTH: f64 = 2.25;
pub const HALF_WIDTH: f64 = 1.0;
pub const HEIGHT: f64 = 1.6;
/// Radius of the three circles approximating a vehicle footprint.
pub const CIRCLE_RADIUS: f64 = 1.0;

/// Steer in `[-1, 1]` (positive turns right), throttle in `[0, 1]`, and a
/// discrete brake that forces zero throttle.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct ControlCommand {
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

impl ControlCommand {
    pub fn braking(steer: f64) -> Self {
        Self {
            steer,
            throttle: 0.0,
            brake: true,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct VehicleState {
    pub pose: Pose,
    pub speed: f64,
}

impl VehicleState {
    pub fn step(&mut self, cmd: &ControlCommand) {
        let accel = if cmd.brake {
            -BRAKE_DECEL
        } else {
            ACCEL * cmd.throttle.clamp(0.0, 1.0) - DRAG * self.speed
        };
        self.speed = (self.speed + accel * DT).clamp(0.0, V_MAX);
        let delta = cmd.steer.clamp(-1.0, 1.0) * MAX_STEER;
        self.pose.heading = crate::geom::wrap_angle(self.pose.heading - self.speed * delta.tan() / WHEELBASE * DT);
        self.pose.pos = self.pose.pos + self.pose.forward() * (self.speed * DT);
    }

    pub fn front(&self) -> Vec2 {
        self.pose.pos + self.pose.forward() * HALF_LENGTH
    }

    pub fn obb(&self) -> Obb {
        Obb {
            center: self.pose.pos,
            heading: self.pose.heading,
            half_len: HALF_LENGTH,
            half_wid: HALF_WIDTH,
            height: HEIGHT,
        }
    }

    pub fn circles(&self) -> [Vec2; 3] {
        let f = self.pose.forward() * (HALF_LENGTH - CIRCLE_RADIUS);
        [self.pose.pos - f, self.pose.pos, self.pose.pos + f]
    }

    pub fn hits(&self, other: &Obb) -> bool {
        self.circles().iter().any(|&c| other.overlaps_circle(c, CIRCLE_RADIUS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn displacement_bounded_by_top_speed() {
        let mut v = VehicleState {
            speed: 7.9,
            ..Default::default()
        };
        for _ in 0..20 {
            let before = v.pose.pos;
            v.step(&ControlCommand {
                steer: 0.3,
                throttle: 1.0,
                brake: false,
            });
            assert!(v.pose.pos.dist(before) <= V_MAX * DT + 1e-12);
        }
    }

    #[test]
    fn positive_steer_turns_right() {
        let mut v = VehicleState {
            speed: 5.0,
            ..Default::default()
        };
        v.step(&ControlCommand {
            steer: 0.5,
            throttle: 0.2,
            brake: false,
        });
        assert!(v.pose.heading < 0.0);
    }
}
