//! Waypoints → actuator commands: aim point, desired speed, heading error,
//! then one PID per axis.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::planner::WaypointPlan;

/// Steer in [-1, 1] (−1 full left); throttle in [-1, max_throttle] (−1 full brake).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub steer: f64,
    pub throttle: f64,
}

impl ControlAction {
    pub const BRAKE: ControlAction = ControlAction {
        steer: 0.0,
        throttle: -1.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Integral window length in samples.
    pub window: usize,
}

impl PidGains {
    pub const LATERAL: PidGains = PidGains {
        kp: 1.25,
        ki: 0.75,
        kd: 0.3,
        window: 30,
    };
    pub const LONGITUDINAL: PidGains = PidGains {
        kp: 5.0,
        ki: 0.5,
        kd: 1.0,
        window: 40,
    };
}

/// Discrete PID: `kp·e + ki·mean(window) + kd·(e − e_prev)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PidController {
    gains: PidGains,
    buffer: VecDeque<f64>,
    last_error: f64,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        PidController {
            gains,
            buffer: VecDeque::with_capacity(gains.window),
            last_error: 0.0,
        }
    }

    pub fn gains(&self) -> PidGains {
        self.gains
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.last_error = 0.0;
    }

    pub fn step(&mut self, error: f64, dt: f64) -> Result<f64> {
        Ok(self.step_terms(error, dt)?.iter().sum())
    }

    /// The proportional, integral and derivative contributions of one step.
    pub fn step_terms(&mut self, error: f64, dt: f64) -> Result<[f64; 3]> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("pid dt must be positive, got {dt}")));
        }
        if self.gains.window > 0 {
            if self.buffer.len() == self.gains.window {
                self.buffer.pop_front();
            }
            self.buffer.push_back(error);
        }
        let integral = if self.buffer.is_empty() {
            0.0
        } else {
            self.buffer.iter().sum::<f64>() / self.buffer.len() as f64
        };
        let derivative = error - self.last_error;
        self.last_error = error;
        Ok([
            self.gains.kp * error,
            self.gains.ki * integral,
            self.gains.kd * derivative,
        ])
    }
}

/// Mean of the plan's points.
pub fn aim_point(plan: &WaypointPlan) -> Result<Vec2> {
    if plan.is_empty() {
        return Err(Error::invalid("aim point of an empty plan"));
    }
    let sum = plan.points().iter().fold(Vec2::ZERO, |acc, p| acc + *p);
    Ok(sum * (1.0 / plan.len() as f64))
}

/// Mean segment length divided by the waypoint time spacing.
pub fn desired_speed(plan: &WaypointPlan, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("waypoint spacing must be positive, got {dt}")));
    }
    if plan.len() < 2 {
        return Err(Error::invalid("desired speed needs at least two waypoints"));
    }
    let pts = plan.points();
    let total: f64 = pts.windows(2).map(|w| w[1].distance(w[0]) / dt).sum();
    Ok(total / (pts.len() - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadingAngle {
    pub radians: f64,
    /// Aim point at the origin; `radians` is then 0.
    pub degenerate: bool,
}

/// Angle from the vehicle's forward axis to `p`, positive to the left.
pub fn heading_angle(p: Vec2) -> HeadingAngle {
    if p.x == 0.0 && p.y == 0.0 {
        HeadingAngle {
            radians: 0.0,
            degenerate: true,
        }
    } else {
        HeadingAngle {
            radians: p.y.atan2(p.x),
            degenerate: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    pub max_throttle: f64,
    /// Plans slower than this command a full brake.
    pub stop_speed: f64,
    /// Time between consecutive waypoints, seconds.
    pub waypoint_dt: f64,
    /// Controller update period, seconds.
    pub control_dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            lateral: PidGains::LATERAL,
            longitudinal: PidGains::LONGITUDINAL,
            max_throttle: 0.75,
            stop_speed: 0.2,
            waypoint_dt: 0.5,
            control_dt: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    pub action: ControlAction,
    pub aim: Vec2,
    pub desired_speed: f64,
    pub heading: HeadingAngle,
}

/// Lateral + longitudinal PID pair for one vehicle.
#[derive(Clone, Debug)]
pub struct VehicleController {
    pub config: ControllerConfig,
    lateral: PidController,
    longitudinal: PidController,
}

impl VehicleController {
    pub fn new(config: ControllerConfig) -> Self {
        VehicleController {
            lateral: PidController::new(config.lateral),
            longitudinal: PidController::new(config.longitudinal),
            config,
        }
    }

    pub fn reset(&mut self) {
        self.lateral.reset();
        self.longitudinal.reset();
    }

    pub fn act(&mut self, plan: &WaypointPlan, ego_speed: f64) -> Result<ControlOutput> {
        let aim = aim_point(plan)?;
        let v_desired = desired_speed(plan, self.config.waypoint_dt)?;
        let heading = heading_angle(aim);
        let dt = self.config.control_dt;
        // Left target (positive angle) must produce negative steer.
        let steer = self.lateral.step(-heading.radians, dt)?.clamp(-1.0, 1.0);
        let speed_cmd = self.longitudinal.step(v_desired - ego_speed, dt)?;
        let throttle = if v_desired < self.config.stop_speed {
            -1.0
        } else {
            speed_cmd.clamp(-1.0, self.config.max_throttle)
        };
        Ok(ControlOutput {
            action: ControlAction { steer, throttle },
            aim,
            desired_speed: v_desired,
            heading,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn plan(points: &[(f64, f64)]) -> WaypointPlan {
        WaypointPlan::new(points.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn aim_point_examples() {
        assert_eq!(aim_point(&plan(&[(1.0, 0.0), (3.0, 0.0)])).unwrap(), Vec2::new(2.0, 0.0));
        assert_eq!(aim_point(&plan(&[(0.0, 0.0); 4])).unwrap(), Vec2::ZERO);
    }

    #[test]
    fn desired_speed_examples() {
        let p = plan(&[(0.0, 0.0), (0.0, 2.0), (0.0, 4.0), (0.0, 6.0)]);
        assert_eq!(desired_speed(&p, 1.0).unwrap(), 2.0);
        assert_eq!(desired_speed(&plan(&[(1.0, 1.0); 4]), 0.5).unwrap(), 0.0);
        assert!(desired_speed(&p, 0.0).is_err());
        assert!(desired_speed(&plan(&[(1.0, 1.0)]), 1.0).is_err());
    }

    #[test]
    fn heading_examples() {
        assert_eq!(heading_angle(Vec2::new(2.0, 0.0)).radians, 0.0);
        assert!((heading_angle(Vec2::new(1.0, 1.0)).radians - FRAC_PI_4).abs() < 1e-15);
        assert!((heading_angle(Vec2::new(0.0, 1.0)).radians - FRAC_PI_2).abs() < 1e-15);
        let h = heading_angle(Vec2::ZERO);
        assert!(h.degenerate);
        assert_eq!(h.radians, 0.0);
    }

    #[test]
    fn pid_examples() {
        let mut pid = PidController::new(PidGains::LATERAL);
        assert_eq!(pid.step(0.0, 0.05).unwrap(), 0.0);
        let mut pid = PidController::new(PidGains::LATERAL);
        let out = pid.step(0.1, 0.05).unwrap();
        assert!((out - 0.23).abs() < 1e-12);
        let terms = pid.step_terms(0.1, 0.05).unwrap();
        assert_eq!(terms[2], 0.0);
        assert!(pid.step(0.1, 0.0).is_err());
    }

    #[test]
    fn pid_window_evicts() {
        let mut pid = PidController::new(PidGains {
            kp: 0.0,
            ki: 1.0,
            kd: 0.0,
            window: 3,
        });
        for e in [3.0, 3.0, 3.0, 0.0, 0.0] {
            pid.step(e, 0.1).unwrap();
        }
        assert_eq!(pid.buffered(), 3);
        assert_eq!(pid.step(0.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn straight_plan_at_target_speed() {
        let mut c = VehicleController::new(ControllerConfig::default());
        let p = WaypointPlan::from_ego_outward((1..=4).map(|k| Vec2::new(3.0 * k as f64, 0.0)).collect()).unwrap();
        let out = c.act(&p, 6.0).unwrap();
        assert_eq!(out.desired_speed, 6.0);
        assert_eq!(out.action.steer, 0.0);
        assert!(out.action.throttle.abs() < 1e-12);
    }

    #[test]
    fn left_target_steers_left() {
        let mut c = VehicleController::new(ControllerConfig::default());
        let p = plan(&[(8.0, 4.0), (6.0, 3.0), (4.0, 2.0), (2.0, 1.0)]);
        assert!(c.act(&p, 3.0).unwrap().action.steer < 0.0);
        let mut c = VehicleController::new(ControllerConfig::default());
        let p = plan(&[(8.0, -4.0), (6.0, -3.0), (4.0, -2.0), (2.0, -1.0)]);
        assert!(c.act(&p, 3.0).unwrap().action.steer > 0.0);
    }

    #[test]
    fn degenerate_plan_brakes() {
        for speed in [0.0, 3.0] {
            let mut c = VehicleController::new(ControllerConfig::default());
            let out = c.act(&plan(&[(0.0, 0.0); 4]), speed).unwrap();
            assert!(out.heading.degenerate);
            assert!(out.action.throttle < 0.0);
            assert_eq!(out.action.steer, 0.0);
        }
    }

    proptest! {
        #[test]
        fn outputs_stay_clamped(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..6), speed in 0.0f64..20.0, steps in 1usize..5) {
            let mut c = VehicleController::new(ControllerConfig::default());
            let p = plan(&pts);
            for _ in 0..steps {
                let a = c.act(&p, speed).unwrap().action;
                prop_assert!((-1.0..=1.0).contains(&a.steer));
                prop_assert!((-1.0..=0.75).contains(&a.throttle));
            }
        }

        #[test]
        fn heading_rotation_consistent(x in -10.0f64..10.0, y in -10.0f64..10.0, theta in -3.0f64..3.0) {
            prop_assume!(x.hypot(y) > 1e-3);
            let p = Vec2::new(x, y);
            let d0 = heading_angle(p).radians;
            let d1 = heading_angle(p.rotate(theta)).radians;
            prop_assert!(crate::geometry::wrap_angle(d1 - d0 - theta).abs() < 1e-9);
        }

        #[test]
        fn proportional_term_scales_with_kp(kp in 0.1f64..10.0, e in -5.0f64..5.0) {
            let g = PidGains { kp, ki: 0.3, kd: 0.2, window: 5 };
            let mut a = PidController::new(g);
            let mut b = PidController::new(PidGains { kp: 2.0 * kp, ..g });
            let ta = a.step_terms(e, 0.05).unwrap();
            let tb = b.step_terms(e, 0.05).unwrap();
            prop_assert_eq!(tb[0], 2.0 * ta[0]);
            prop_assert_eq!(ta[1], tb[1]);
        }
    }
}
