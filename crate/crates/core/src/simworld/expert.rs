//! Rule-based privileged driver.
//!
//! Reads the route and actor scripts directly: waypoints are laid along the
//! route centerline at the desired speed, which drops to zero while any
//! predicted actor footprint overlaps the stopping corridor ahead.

use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, VehicleController};
use crate::error::Result;
use crate::geometry::{wrap_angle, Polyline, Vec2};
use crate::planner::WaypointPlan;

use super::episode::{Agent, AgentStep};
use super::scenario::CRUISE_SPEED;
use super::WorldState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub cruise_speed: f64,
    pub waypoints: usize,
    /// Seconds between consecutive waypoints.
    pub waypoint_dt: f64,
    /// Arc length between the ego and the first waypoint at zero speed.
    pub lookahead: f64,
    /// Lateral acceleration allowed through curves, m/s².
    pub lateral_accel: f64,
    /// Deceleration assumed when sizing the stopping corridor, m/s².
    pub planning_decel: f64,
    pub reaction_time: f64,
    pub corridor_margin: f64,
    /// Clearance added to the ego half width on each side of the corridor.
    pub side_clearance: f64,
    /// Actor motion is predicted this far ahead.
    pub horizon: f64,
    pub recovery_speed: f64,
    pub controller: ControllerConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            cruise_speed: CRUISE_SPEED,
            waypoints: 4,
            waypoint_dt: 0.5,
            lookahead: 3.0,
            lateral_accel: 2.0,
            planning_decel: 4.0,
            reaction_time: 0.3,
            corridor_margin: 2.5,
            side_clearance: 0.6,
            horizon: 2.0,
            recovery_speed: 3.0,
            controller: ControllerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDecision {
    pub plan: WaypointPlan,
    pub desired_speed: f64,
    /// Actor that forced a stop, if any.
    pub hazard: Option<u32>,
    pub action: crate::control::ControlAction,
}

/// Point at arc length `s`, continuing straight past either end.
fn extended_point(line: &Polyline, s: f64) -> Vec2 {
    let len = line.length();
    if s > len {
        line.point_at(len) + line.tangent_at(len) * (s - len)
    } else {
        line.point_at(s)
    }
}

fn curve_speed(line: &Polyline, s0: f64, span: f64, lateral_accel: f64) -> f64 {
    let step = 2.0;
    let mut v = f64::INFINITY;
    let mut s = s0;
    while s < (s0 + span).min(line.length() - step) {
        let kappa = wrap_angle(line.heading_at(s + step) - line.heading_at(s)).abs() / step;
        if kappa > 1e-6 {
            v = v.min((lateral_accel / kappa).sqrt());
        }
        s += step;
    }
    v
}

fn corridor_length(cfg: &ExpertConfig, w: &WorldState) -> f64 {
    let v = w.ego.speed;
    w.vehicle.length / 2.0 + v * v / (2.0 * cfg.planning_decel) + v * cfg.reaction_time + cfg.corridor_margin
}

/// First actor whose predicted footprint enters the corridor ahead of the ego.
pub fn corridor_hazard(cfg: &ExpertConfig, w: &WorldState) -> Option<u32> {
    let route = &w.route;
    let ego_s = route.project_near(w.ego.pose.position, w.progress).arc_length;
    let reach = corridor_length(cfg, w);
    let half = w.vehicle.width / 2.0 + cfg.side_clearance;
    let step = 0.1;
    let samples = (cfg.horizon / step).round() as usize;
    for actor in &w.actors {
        if actor.pose.position.distance(w.ego.pose.position) > reach + w.ego.speed * cfg.horizon + 20.0 {
            continue;
        }
        let future = actor.predict(w.time, step, samples);
        let poses = std::iter::once((0.0, actor.pose)).chain(
            future
                .into_iter()
                .enumerate()
                .skip(4)
                .step_by(5)
                .map(|(i, p)| ((i + 1) as f64 * step, p)),
        );
        for (tau, pose) in poses {
            // The corridor travels with the ego at its current speed.
            let lo = ego_s + w.ego.speed * tau;
            let mut ghost = actor.clone();
            ghost.pose = pose;
            let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut s_lo, mut s_hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in ghost.corners().into_iter().chain([pose.position]) {
                let proj = route.project_window(p, ego_s, 8.0, 50.0);
                lat_lo = lat_lo.min(proj.lateral);
                lat_hi = lat_hi.max(proj.lateral);
                s_lo = s_lo.min(proj.arc_length);
                s_hi = s_hi.max(proj.arc_length);
            }
            if lat_hi >= -half && lat_lo <= half && s_hi >= lo && s_lo <= lo + reach {
                return Some(actor.id);
            }
        }
    }
    None
}

/// Waypoints and target speed for the current state, without controller state.
pub fn expert_plan(cfg: &ExpertConfig, w: &WorldState) -> Result<(WaypointPlan, f64, Option<u32>)> {
    let ego = w.ego.pose;
    let recovering = !w.road.is_drivable(ego.position);
    let recovery_line;
    let (line, s0): (&Polyline, f64) = match (recovering, w.road.nearest_centerline(ego.position)) {
        (true, Some((lane, proj))) => {
            recovery_line = w.road.lanes()[lane].centerline.clone();
            (&recovery_line, proj.arc_length)
        }
        _ => (w.route.path(), w.route.project_near(ego.position, w.progress).arc_length),
    };

    let span = cfg.cruise_speed * cfg.waypoint_dt * cfg.waypoints as f64 + cfg.lookahead;
    let mut v = cfg
        .cruise_speed
        .min(curve_speed(line, s0, span + 10.0, cfg.lateral_accel));
    if recovering {
        v = v.min(cfg.recovery_speed);
    }
    let hazard = corridor_hazard(cfg, w);
    if hazard.is_some() {
        v = 0.0;
    }
    let points = (1..=cfg.waypoints)
        .map(|k| ego.to_local(extended_point(line, s0 + cfg.lookahead + v * cfg.waypoint_dt * k as f64)))
        .collect();
    Ok((WaypointPlan::from_ego_outward(points)?, v, hazard))
}

/// Privileged expert: [`expert_plan`] followed by the PID controller.
#[derive(Clone, Debug)]
pub struct ExpertAgent {
    pub config: ExpertConfig,
    controller: VehicleController,
}

impl ExpertAgent {
    pub fn new(config: ExpertConfig) -> Self {
        ExpertAgent {
            controller: VehicleController::new(config.controller),
            config,
        }
    }

    pub fn decide(&mut self, w: &WorldState) -> Result<ExpertDecision> {
        let (plan, desired_speed, hazard) = expert_plan(&self.config, w)?;
        let out = self.controller.act(&plan, w.ego.speed)?;
        Ok(ExpertDecision {
            plan,
            desired_speed,
            hazard,
            action: out.action,
        })
    }
}

impl Default for ExpertAgent {
    fn default() -> Self {
        ExpertAgent::new(ExpertConfig::default())
    }
}

impl Agent for ExpertAgent {
    fn name(&self) -> &str {
        "expert"
    }

    fn reset(&mut self) {
        self.controller.reset();
    }

    fn act(&mut self, w: &WorldState) -> Result<AgentStep> {
        let d = self.decide(w)?;
        Ok(AgentStep {
            action: d.action,
            plan: Some(d.plan),
        })
    }
}
